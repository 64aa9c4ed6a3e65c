#pragma once

#include <filesystem>
#include <iosfwd>

#include "phantom/tensor.hpp"

namespace phantom {

// "TNSR1" container: magic bytes, u8 rank, rank x u32 little-endian dims,
// then row-major IEEE-754 32-bit little-endian floats. The on-disk payload
// is always f32 regardless of the build's working precision.
void write_tnsr1(std::ostream& os, const Tensor& t);
Tensor read_tnsr1(std::istream& is);

// File variants write atomically (temp file + rename).
void save_tnsr1(const std::filesystem::path& path, const Tensor& t);
Tensor load_tnsr1(const std::filesystem::path& path);

// Atomic whole-file text write used by every artifact writer.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

} // namespace phantom
