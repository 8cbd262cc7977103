#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include "didfuse/io.hpp"

namespace didfuse {
namespace {

constexpr double kR = 0.299, kG = 0.587, kB = 0.114;

std::string lower_ext(const std::filesystem::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e;
}

double luma(unsigned r, unsigned g, unsigned b) { return (kR * r + kG * g + kB * b) / 255.0; }

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

Image load_png(const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path.string());
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw IoError(path.string() + " is not a PNG file");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng initialisation failed");
  }
  std::vector<unsigned char> buf;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("corrupt PNG " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (depth != 8 && !(color == PNG_COLOR_TYPE_PALETTE || (color == PNG_COLOR_TYPE_GRAY && depth < 8))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(path.string() + ": unsupported bit depth " + std::to_string(depth) + " (8-bit only)");
  }
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const std::size_t w = png_get_image_width(png, info), h = png_get_image_height(png, info);
  const std::size_t channels = png_get_channels(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  buf.resize(stride * h);
  rows.resize(h);
  for (std::size_t y = 0; y < h; ++y) rows[y] = buf.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Image img(h, w);
  for (std::size_t y = 0; y < h; ++y) {
    const unsigned char* r = rows[y];
    for (std::size_t x = 0; x < w; ++x) {
      const unsigned char* p = r + x * channels;
      img.at(y, x) = channels >= 3 ? luma(p[0], p[1], p[2]) : p[0] / 255.0;
    }
  }
  return img;
}

// Netpbm header tokens, skipping comments.
std::string next_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

std::size_t parse_dim(const std::string& tok, const std::filesystem::path& path) {
  try {
    std::size_t pos = 0;
    const long v = std::stol(tok, &pos);
    if (pos != tok.size() || v <= 0) throw std::invalid_argument(tok);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw IoError(path.string() + ": malformed header field '" + tok + "'");
  }
}

Image load_netpbm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string magic = next_token(in);
  if (magic != "P5" && magic != "P2" && magic != "P6") throw IoError(path.string() + ": unsupported netpbm type '" + magic + "'");
  const std::size_t w = parse_dim(next_token(in), path);
  const std::size_t h = parse_dim(next_token(in), path);
  const std::size_t maxval = parse_dim(next_token(in), path);
  if (maxval != 255) throw IoError(path.string() + ": unsupported bit depth (maxval " + std::to_string(maxval) + ", 8-bit only)");
  Image img(h, w);
  if (magic == "P2") {
    for (double& v : img.pixels) {
      const std::string t = next_token(in);
      if (t.empty()) throw IoError(path.string() + ": truncated pixel data");
      const std::size_t b = std::stoul(t);
      if (b > 255) throw IoError(path.string() + ": sample exceeds maxval");
      v = b / 255.0;
    }
    return img;
  }
  const std::size_t channels = magic == "P6" ? 3 : 1;
  std::vector<unsigned char> data(w * h * channels);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (static_cast<std::size_t>(in.gcount()) != data.size()) throw IoError(path.string() + ": truncated pixel data");
  for (std::size_t i = 0; i < w * h; ++i)
    img.pixels[i] = channels == 3 ? luma(data[3 * i], data[3 * i + 1], data[3 * i + 2]) : data[i] / 255.0;
  return img;
}

void write_png(const std::vector<unsigned char>& bytes, std::size_t h, std::size_t w, const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < h; ++y) png_write_row(png, const_cast<png_bytep>(bytes.data() + y * w));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

Image load_grayscale(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
  const std::string ext = lower_ext(path);
  Image img = ext == ".png" ? load_png(path) : load_netpbm(path);
  if (img.height < 2 || img.width < 2) throw IoError(path.string() + ": images must be at least 2x2");
  return img;
}

ImageRecord load_record(const std::filesystem::path& path, SourceKind kind) {
  return ImageRecord{path.stem().string(), load_grayscale(path), kind};
}

std::vector<unsigned char> to_bytes(const Image& img) {
  std::vector<unsigned char> out(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    double v = img.pixels[i];
    v = std::isnan(v) ? 0.0 : std::clamp(v, 0.0, 1.0);
    out[i] = static_cast<unsigned char>(std::min(255.0, std::floor(v * 255.0 + 0.5)));
  }
  return out;
}

void write_image(const Image& img, const std::filesystem::path& path) {
  if (img.empty()) throw IoError("refusing to write an empty image to " + path.string());
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::vector<unsigned char> bytes = to_bytes(img);
  if (lower_ext(path) == ".png") {
    write_png(bytes, img.height, img.width, path);
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

Image center_crop(const Image& img, std::size_t size) {
  if (size == 0) throw std::invalid_argument("crop size must be positive");
  if (img.height < size || img.width < size)
    throw ShapeError("image " + std::to_string(img.height) + "x" + std::to_string(img.width) + " is smaller than crop " +
                     std::to_string(size) + "; pass a smaller --crop");
  const std::size_t top = (img.height - size) / 2, left = (img.width - size) / 2;
  Image out(size, size);
  for (std::size_t y = 0; y < size; ++y)
    std::copy_n(img.pixels.begin() + static_cast<std::ptrdiff_t>((top + y) * img.width + left), size,
                out.pixels.begin() + static_cast<std::ptrdiff_t>(y * size));
  return out;
}

}  // namespace didfuse
