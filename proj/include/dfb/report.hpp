#pragma once

// Report artifacts: CSV tables, spectrum heatmaps and a SHA-256 manifest.
// Output bytes depend only on the values written, never on time or paths.

#include "dfb/tensor.hpp"

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

namespace dfb {

// Fixed 4-decimal rendering; negative zero prints as 0.0000. Throws on
// non-finite values.
std::string format_fixed4(double v);

class CsvTable {
public:
    using Cell = std::variant<std::string, double, std::int64_t>;

    explicit CsvTable(std::vector<std::string> header);

    // Row length must equal the header length.
    void add_row(std::vector<Cell> row);
    std::size_t rows() const { return rows_.size(); }
    const std::vector<std::string>& header() const { return header_; }
    std::string str() const;

private:
    std::vector<std::string> header_;
    std::vector<std::vector<Cell>> rows_;
};

// Integer cell helper for unsigned counts.
inline CsvTable::Cell count_cell(std::size_t n)
{
    return static_cast<std::int64_t>(n);
}

struct ManifestEntry {
    std::string path;  // relative to the report directory, '/'-separated
    std::uint64_t bytes = 0;
    std::string sha256;
};

class ReportWriter {
public:
    // Creates the directory. Files from earlier runs that this writer does
    // not rewrite are left alone but never enter the manifest.
    explicit ReportWriter(std::string dir);

    void write_text(const std::string& name, const std::string& contents);
    void write_csv(const std::string& name, const CsvTable& table);
    // Min-max normalized 8-bit heatmap; the bounds go to spectra_bounds.csv.
    void write_spectrum(const std::string& name, const Tensor& spectrum);
    void write_image(const std::string& name, const Tensor& image);

    // Writes spectra_bounds.csv (if any spectrum was written) and
    // manifest.csv listing every written file in path order.
    std::vector<ManifestEntry> finish();

    const std::string& dir() const { return dir_; }

private:
    std::string dir_;
    std::vector<ManifestEntry> written_;
    CsvTable bounds_{{"spectrum", "min", "max"}};
    bool finished_ = false;
};

// Parses dir/manifest.csv and returns the paths whose size or hash no
// longer match the files on disk.
std::vector<std::string> verify_manifest(const std::string& dir);

}  // namespace dfb
