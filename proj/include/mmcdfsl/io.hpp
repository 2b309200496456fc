#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mmcdfsl/models.hpp"
#include "mmcdfsl/synth_data.hpp"
#include "mmcdfsl/tensor.hpp"

namespace mmcdfsl::io {

namespace fs = std::filesystem;

// Binary files are little-endian. All failures throw IoError.

void write_tensor(const fs::path& path, const Tensor4& t);
Tensor4 read_tensor(const fs::path& path);

/// `dir/manifest.txt` plus one tensor file per sample and modality under `dir/clips/`.
void save_dataset(const fs::path& dir, const Dataset& data, const std::string& config_hash);
Dataset load_dataset(const fs::path& dir);

/// Bit-exact round trip of every parameter plus the header fields of the bundle.
void save_bundle(const fs::path& path, const ModelBundle& bundle);
/// Throws IoError on a bad magic or version, truncated data, or a tensor set
/// that does not match the structure announced in the header.
ModelBundle load_bundle(const fs::path& path);

/// Shortest representation that parses back to the same double.
std::string format_double(double v);

/// Writes "# config_hash=<hash>", the header row, then the rows. Cells are not quoted.
void write_csv(const fs::path& path, const std::string& config_hash, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

struct CsvTable {
  std::string config_hash;  // empty when the file has no hash comment
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};
CsvTable read_csv(const fs::path& path);

/// Creates the directory (and parents) or throws IoError.
void ensure_directory(const fs::path& dir);

}  // namespace mmcdfsl::io
