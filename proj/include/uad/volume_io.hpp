#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "uad/volume.hpp"

namespace uad {

// VOL1 layout:
//   bytes 0-3   "VOL1"
//   bytes 4-7   header length H, uint32 little-endian
//   bytes 8..   H bytes of JSON {"dims":[nx,ny,nz],"spacing":[sx,sy,sz],"dtype":"f32le"}
//   remainder   4*nx*ny*nz bytes, float32 little-endian, x-fastest

std::vector<unsigned char> encode_vol1(const Volume &v);
Volume decode_vol1(const std::vector<unsigned char> &bytes);

void save_volume(const Volume &v, const std::filesystem::path &path);
Volume load_volume(const std::filesystem::path &path);

/// Round every voxel through float32, as a save/load would.
Volume quantise_f32(const Volume &v);

enum class PgmScaling {
    minmax,   // slice min -> 0, slice max -> 255
    diverging // symmetric about zero, 0 -> mid grey
};

std::vector<unsigned char> encode_pgm(const SliceImage &s, PgmScaling scaling);
void save_pgm(const SliceImage &s, const std::filesystem::path &path, PgmScaling scaling);

// Small helpers shared by the binary writers.
void write_bytes(const std::filesystem::path &path, const std::vector<unsigned char> &bytes);
std::vector<unsigned char> read_bytes(const std::filesystem::path &path);
void write_text(const std::filesystem::path &path, const std::string &text);
std::string read_text(const std::filesystem::path &path);

} // namespace uad
