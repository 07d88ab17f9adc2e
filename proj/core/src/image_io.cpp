#include "caustic/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

#include "caustic/error.hpp"

namespace caustic {
namespace {

void skip_pgm_space(std::istream& in) {
  for (;;) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      return;
    }
  }
}

int read_pgm_int(std::istream& in, const std::filesystem::path& path) {
  skip_pgm_space(in);
  int value = 0;
  if (!(in >> value)) throw Error(ErrorKind::IoError, "malformed PGM header in " + path.string());
  return value;
}

std::vector<unsigned char> to_bytes(const GrayImage& image, bool normalize) {
  double scale = 1.0;
  if (normalize) {
    double mx = 0.0;
    for (double v : image.pixels) mx = std::max(mx, v);
    scale = mx > 0.0 ? 255.0 / mx : 0.0;
  }
  std::vector<unsigned char> bytes(image.pixels.size());
  for (size_t i = 0; i < bytes.size(); ++i)
    bytes[i] = static_cast<unsigned char>(std::clamp(std::lround(image.pixels[i] * scale), 0L, 255L));
  return bytes;
}

struct FileCloser {
  void operator()(std::FILE* f) const { if (f) std::fclose(f); }
};

}  // namespace

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P2" && magic != "P5") throw Error(ErrorKind::IoError, "not a PGM file: " + path.string());
  const int w = read_pgm_int(in, path);
  const int h = read_pgm_int(in, path);
  const int maxval = read_pgm_int(in, path);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255)
    throw Error(ErrorKind::IoError, "unsupported PGM (8-bit only): " + path.string());
  GrayImage image(w, h);
  if (magic == "P2") {
    for (auto& p : image.pixels) p = read_pgm_int(in, path) * 255.0 / maxval;
  } else {
    in.get();  // single whitespace after maxval
    std::vector<unsigned char> bytes(image.pixels.size());
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
      throw Error(ErrorKind::IoError, "truncated PGM: " + path.string());
    for (size_t i = 0; i < bytes.size(); ++i) image.pixels[i] = bytes[i] * 255.0 / maxval;
  }
  return image;
}

GrayImage read_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw Error(ErrorKind::IoError, "cannot read PNG " + path.string() + ": " + img.message);
  img.format = PNG_FORMAT_GRAY;
  std::vector<unsigned char> bytes(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, bytes.data(), 0, nullptr)) {
    png_image_free(&img);
    throw Error(ErrorKind::IoError, "cannot decode PNG " + path.string() + ": " + img.message);
  }
  GrayImage image(static_cast<int>(img.width), static_cast<int>(img.height));
  for (size_t i = 0; i < image.pixels.size(); ++i) image.pixels[i] = bytes[i];
  return image;
}

GrayImage read_image(const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.c_str(), "rb"));
  if (!f) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  unsigned char sig[8] = {};
  const size_t n = std::fread(sig, 1, sizeof sig, f.get());
  if (n >= 2 && sig[0] == 'P' && (sig[1] == '2' || sig[1] == '5')) return read_pgm(path);
  if (n == 8 && png_sig_cmp(sig, 0, 8) == 0) return read_png(path);
  throw Error(ErrorKind::IoError, "unrecognised image format: " + path.string());
}

void write_pgm(const GrayImage& image, const std::filesystem::path& path, bool normalize) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  const auto bytes = to_bytes(image, normalize);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_png(const GrayImage& image, const std::filesystem::path& path, bool normalize) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_GRAY;
  const auto bytes = to_bytes(image, normalize);
  if (!png_image_write_to_file(&img, path.c_str(), 0, bytes.data(), 0, nullptr))
    throw Error(ErrorKind::IoError, "cannot write PNG " + path.string() + ": " + img.message);
}

void write_image(const GrayImage& image, const std::filesystem::path& path, bool normalize) {
  if (path.extension() == ".png")
    write_png(image, path, normalize);
  else
    write_pgm(image, path, normalize);
}

GrayImage synthetic_image(std::string_view name, int size) {
  if (size < 1) throw Error(ErrorKind::ConfigError, "synthetic image size must be positive");
  GrayImage img(size, size);
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      const double x = (c + 0.5) / size - 0.5, y = 0.5 - (r + 0.5) / size;
      const double r2 = x * x + y * y;
      double v = 0.0;
      if (name == "uniform") {
        v = 255.0;
      } else if (name == "gaussian") {
        v = 30.0 + 225.0 * std::exp(-r2 / (2.0 * 0.15 * 0.15));
      } else if (name == "rings") {
        const double rings = 0.5 + 0.5 * std::cos(2.0 * M_PI * 5.0 * std::sqrt(r2) + 1.3 * x);
        v = 20.0 + 235.0 * (0.25 + 0.75 * rings) * std::exp(-2.0 * r2);
      } else {
        throw Error(ErrorKind::ConfigError, "unknown synthetic image '" + std::string(name) + "'");
      }
      img.at(r, c) = v;
    }
  }
  return img;
}

}  // namespace caustic
