#include "dfb/pgm.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>

namespace dfb {

namespace {

std::uint8_t quantize(double v)
{
    if (!(v >= 0.0 && v <= 1.0)) {
        throw std::invalid_argument("write_pgm: pixel value " + std::to_string(v) + " outside [0,1]");
    }
    return static_cast<std::uint8_t>(std::floor(v * 255.0 + 0.5));
}

class HeaderReader {
public:
    explicit HeaderReader(std::string_view bytes) : bytes_(bytes) {}

    void skip_space_and_comments()
    {
        while (pos_ < bytes_.size()) {
            const char c = bytes_[pos_];
            if (c == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else if (std::isspace(static_cast<unsigned char>(c))) {
                ++pos_;
            } else {
                break;
            }
        }
    }

    std::size_t number(const char* what)
    {
        skip_space_and_comments();
        const std::size_t start = pos_;
        std::size_t value = 0;
        while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
            value = value * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
            if (value > 1'000'000) throw ParseError(std::string("pgm: ") + what + " too large", start);
            ++pos_;
        }
        if (pos_ == start) throw ParseError(std::string("pgm: expected ") + what, start);
        return value;
    }

    std::size_t pos() const { return pos_; }
    void advance() { ++pos_; }
    bool at_end() const { return pos_ >= bytes_.size(); }
    char peek() const { return bytes_[pos_]; }

private:
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string write_pgm(const Tensor& image)
{
    if (image.rank() != 2) throw ShapeError("write_pgm: expected [H,W], got " + shape_str(image.shape()));
    const std::size_t h = image.dim(0), w = image.dim(1);
    std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    out.reserve(out.size() + h * w);
    for (double v : image.data()) out.push_back(static_cast<char>(quantize(v)));
    return out;
}

Tensor read_pgm(std::string_view bytes)
{
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw ParseError("pgm: bad magic, expected P5", 0);
    HeaderReader reader(bytes.substr(0));
    reader.advance();
    reader.advance();
    const std::size_t w = reader.number("width");
    const std::size_t h = reader.number("height");
    const std::size_t maxval_at = reader.pos();
    const std::size_t maxval = reader.number("maxval");
    if (maxval != 255) throw ParseError("pgm: unsupported maxval " + std::to_string(maxval), maxval_at);
    if (reader.at_end() || !std::isspace(static_cast<unsigned char>(reader.peek()))) {
        throw ParseError("pgm: missing whitespace after header", reader.pos());
    }
    reader.advance();
    const std::size_t payload = reader.pos();
    if (w == 0 || h == 0) throw ParseError("pgm: empty image", payload);
    if (bytes.size() < payload + w * h) {
        throw ParseError("pgm: truncated payload, expected " + std::to_string(w * h) + " bytes", bytes.size());
    }
    Tensor img({h, w});
    for (std::size_t i = 0; i < w * h; ++i) {
        img[i] = static_cast<double>(static_cast<unsigned char>(bytes[payload + i])) / 255.0;
    }
    return img;
}

void write_pgm_file(const Tensor& image, const std::string& path)
{
    const std::string bytes = write_pgm(image);
    std::ofstream out(path, std::ios::binary);
    if (!out || !out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()))) {
        throw std::runtime_error("cannot write " + path);
    }
}

Tensor read_pgm_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return read_pgm(bytes);
}

Tensor quantize_8bit(const Tensor& image)
{
    Tensor out(image.shape());
    for (std::size_t i = 0; i < image.numel(); ++i) out[i] = static_cast<double>(quantize(image[i])) / 255.0;
    return out;
}

}  // namespace dfb
