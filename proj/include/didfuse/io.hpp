#pragma once

// Image files, dataset pairing and crops.

#include <filesystem>
#include <string>
#include <vector>

#include "didfuse/image.hpp"

namespace didfuse {

enum class SourceKind { kInfrared, kVisible, kFused };

struct ImageRecord {
  std::string id;
  Image image;
  SourceKind kind = SourceKind::kVisible;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// 8-bit PNG (gray, gray+alpha, RGB, RGBA, palette) or binary/ASCII PGM, or
// binary PPM. Colour goes through BT.601 luma; output is in [0,1].
Image load_grayscale(const std::filesystem::path& path);
ImageRecord load_record(const std::filesystem::path& path, SourceKind kind);

// Clamp to [0,1], scale by 255, round half up. Format chosen by extension:
// .png, otherwise .pgm.
std::vector<unsigned char> to_bytes(const Image& img);
void write_image(const Image& img, const std::filesystem::path& path);

// The extra pixel of an odd margin goes to the bottom/right.
Image center_crop(const Image& img, std::size_t size);

struct PairEntry {
  std::string id;
  std::filesystem::path ir;
  std::filesystem::path vis;
};

struct PairManifest {
  std::vector<PairEntry> pairs;
  std::vector<std::string> warnings;
};

bool is_image_file(const std::filesystem::path& p);

// Pairs files with identical stems, in lexicographic order.
PairManifest build_manifest(const std::filesystem::path& ir_dir, const std::filesystem::path& vis_dir);
// Lines "id<TAB>ir_path<TAB>vis_path"; relative paths resolve against the
// manifest's directory. Blank lines and lines starting with '#' are skipped.
PairManifest read_manifest(const std::filesystem::path& file);
void write_manifest(const PairManifest& m, const std::filesystem::path& file);

}  // namespace didfuse
