#include "dfb/report.hpp"

#include "dfb/digest.hpp"
#include "dfb/pgm.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>

namespace dfb {

namespace fs = std::filesystem;

namespace {

std::string quote(const std::string& s)
{
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

void write_bytes(const fs::path& path, const std::string& bytes)
{
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
        if (ec) throw std::runtime_error("cannot create directory '" + path.parent_path().string() + "': " + ec.message());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

std::string read_bytes(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path.string() + "' for reading");
    return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

std::string format_fixed4(double v)
{
    if (!std::isfinite(v)) throw std::invalid_argument("report: non-finite value");
    std::string s = fmt::format("{:.4f}", v);
    if (s == "-0.0000") s = "0.0000";
    return s;
}

CsvTable::CsvTable(std::vector<std::string> header) : header_(std::move(header))
{
    if (header_.empty()) throw std::invalid_argument("CsvTable: empty header");
}

void CsvTable::add_row(std::vector<Cell> row)
{
    if (row.size() != header_.size()) {
        throw std::invalid_argument(fmt::format("CsvTable: row has {} cells, header has {}", row.size(), header_.size()));
    }
    rows_.push_back(std::move(row));
}

std::string CsvTable::str() const
{
    std::string out;
    for (std::size_t i = 0; i < header_.size(); ++i) out += (i ? "," : "") + quote(header_[i]);
    out += "\n";
    for (const auto& row : rows_) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out += ",";
            if (const auto* s = std::get_if<std::string>(&row[i])) {
                out += quote(*s);
            } else if (const auto* d = std::get_if<double>(&row[i])) {
                out += format_fixed4(*d);
            } else {
                out += std::to_string(std::get<std::int64_t>(row[i]));
            }
        }
        out += "\n";
    }
    return out;
}

ReportWriter::ReportWriter(std::string dir) : dir_(std::move(dir))
{
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw std::runtime_error("cannot create report directory '" + dir_ + "': " + ec.message());
}

void ReportWriter::write_text(const std::string& name, const std::string& contents)
{
    if (finished_) throw std::logic_error("ReportWriter: write after finish");
    if (name == "manifest.csv") throw std::invalid_argument("ReportWriter: manifest.csv is reserved");
    write_bytes(fs::path(dir_) / name, contents);
    auto it = std::find_if(written_.begin(), written_.end(), [&](const ManifestEntry& e) { return e.path == name; });
    ManifestEntry entry{name, contents.size(), sha256_hex(contents)};
    if (it == written_.end()) {
        written_.push_back(std::move(entry));
    } else {
        *it = std::move(entry);
    }
}

void ReportWriter::write_csv(const std::string& name, const CsvTable& table)
{
    write_text(name, table.str());
}

void ReportWriter::write_spectrum(const std::string& name, const Tensor& spectrum)
{
    if (spectrum.numel() == 0) throw std::invalid_argument("ReportWriter: empty spectrum '" + name + "'");
    const auto [lo_it, hi_it] = std::minmax_element(spectrum.data().begin(), spectrum.data().end());
    const double lo = *lo_it, hi = *hi_it;
    Tensor scaled(spectrum.shape());
    const double span = hi - lo;
    for (std::size_t i = 0; i < spectrum.numel(); ++i) scaled[i] = span > 0.0 ? (spectrum[i] - lo) / span : 0.0;
    write_text(name, write_pgm(scaled));
    bounds_.add_row({name, lo, hi});
}

void ReportWriter::write_image(const std::string& name, const Tensor& image)
{
    write_text(name, write_pgm(image));
}

std::vector<ManifestEntry> ReportWriter::finish()
{
    if (finished_) throw std::logic_error("ReportWriter: finish called twice");
    if (bounds_.rows() > 0) write_csv("spectra_bounds.csv", bounds_);
    finished_ = true;
    std::vector<ManifestEntry> entries = written_;
    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
    CsvTable manifest({"path", "bytes", "sha256"});
    for (const auto& e : entries) manifest.add_row({e.path, static_cast<std::int64_t>(e.bytes), e.sha256});
    write_bytes(fs::path(dir_) / "manifest.csv", manifest.str());
    return entries;
}

std::vector<std::string> verify_manifest(const std::string& dir)
{
    std::istringstream in(read_bytes(fs::path(dir) / "manifest.csv"));
    std::string line;
    std::getline(in, line);
    if (line != "path,bytes,sha256") throw std::runtime_error("manifest in '" + dir + "' has an unexpected header");
    std::vector<std::string> bad;
    while (std::getline(in, line)) {
        const auto c1 = line.find(','), c2 = line.rfind(',');
        if (c1 == std::string::npos || c1 == c2) throw std::runtime_error("manifest line malformed: '" + line + "'");
        const std::string path = line.substr(0, c1);
        const std::string hash = line.substr(c2 + 1);
        const std::uint64_t bytes = std::stoull(line.substr(c1 + 1, c2 - c1 - 1));
        const fs::path file = fs::path(dir) / path;
        if (!fs::exists(file)) {
            bad.push_back(path);
            continue;
        }
        const std::string contents = read_bytes(file);
        if (contents.size() != bytes || sha256_hex(contents) != hash) bad.push_back(path);
    }
    return bad;
}

}  // namespace dfb
