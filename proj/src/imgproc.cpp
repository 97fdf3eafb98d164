#include "vtonsift/imgproc.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iterator>

#include "vtonsift/error.hpp"

namespace vtonsift {

float GrayImage::clamped(int x, int y) const {
  x = std::clamp(x, 0, width - 1);
  y = std::clamp(y, 0, height - 1);
  return at(x, y);
}

namespace {

bool is_png(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t kSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  return bytes.size() >= 8 && std::memcmp(bytes.data(), kSig, 8) == 0;
}

RgbImage decode_png(std::span<const std::uint8_t> bytes) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw Error(ErrorCode::MalformedImage, std::string("png header: ") + image.message);
  }
  // RGBA keeps colour channels unassociated so alpha can simply be discarded.
  image.format = PNG_FORMAT_RGBA;
  if (image.width == 0 || image.height == 0 || image.width > (1u << 15) || image.height > (1u << 15)) {
    png_image_free(&image);
    throw Error(ErrorCode::MalformedImage, "png dimensions out of range");
  }
  std::vector<std::uint8_t> rgba(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, rgba.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw Error(ErrorCode::MalformedImage, "png body: " + msg);
  }
  RgbImage out(static_cast<int>(image.width), static_cast<int>(image.height));
  const std::size_t n = static_cast<std::size_t>(out.width) * out.height;
  for (std::size_t i = 0; i < n; ++i) {
    out.data[3 * i + 0] = rgba[4 * i + 0];
    out.data[3 * i + 1] = rgba[4 * i + 1];
    out.data[3 * i + 2] = rgba[4 * i + 2];
  }
  return out;
}

class PpmReader {
 public:
  explicit PpmReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  long next_int() {
    skip_space_and_comments();
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) {
      throw Error(ErrorCode::MalformedImage, "ppm header: expected integer");
    }
    long v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_++] - '0');
      if (v > 1'000'000) throw Error(ErrorCode::MalformedImage, "ppm header: value too large");
    }
    return v;
  }

  void single_whitespace() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) {
      throw Error(ErrorCode::MalformedImage, "ppm header: missing separator before raster");
    }
    ++pos_;
  }

  std::size_t pos() const { return pos_; }
  void advance(std::size_t n) { pos_ += n; }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

RgbImage decode_ppm(std::span<const std::uint8_t> bytes) {
  PpmReader reader(bytes);
  reader.advance(2);
  const long w = reader.next_int();
  const long h = reader.next_int();
  const long maxval = reader.next_int();
  reader.single_whitespace();
  if (w <= 0 || h <= 0) throw Error(ErrorCode::MalformedImage, "ppm: zero dimension");
  if (maxval <= 0 || maxval > 65535) throw Error(ErrorCode::MalformedImage, "ppm: bad maxval");
  const std::size_t bpc = maxval < 256 ? 1 : 2;
  const std::size_t need = static_cast<std::size_t>(w) * h * 3 * bpc;
  if (bytes.size() - reader.pos() < need) throw Error(ErrorCode::MalformedImage, "ppm: truncated raster");

  RgbImage out(static_cast<int>(w), static_cast<int>(h));
  const std::uint8_t* src = bytes.data() + reader.pos();
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    long v = bpc == 1 ? src[i] : (static_cast<long>(src[2 * i]) << 8) | src[2 * i + 1];
    if (v > maxval) throw Error(ErrorCode::MalformedImage, "ppm: sample exceeds maxval");
    out.data[i] = maxval == 255 ? static_cast<std::uint8_t>(v)
                                : static_cast<std::uint8_t>((v * 255 + maxval / 2) / maxval);
  }
  return out;
}

struct PngWriteState {
  std::vector<std::uint8_t>* out;
};

void png_append(png_structp png, png_bytep data, png_size_t len) {
  auto* state = static_cast<PngWriteState*>(png_get_io_ptr(png));
  state->out->insert(state->out->end(), data, data + len);
}

void png_flush_noop(png_structp) {}

// Returns false on libpng failure. Kept free of non-trivial locals because
// libpng reports errors through longjmp.
bool write_png_rows(png_structp png, png_infop info, const RgbImage& img, png_text* text,
                    int n_text, png_bytep* rows) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 6);
  png_set_filter(png, PNG_FILTER_TYPE_BASE, PNG_FILTER_NONE);
  if (n_text > 0) png_set_text(png, info, text, n_text);
  png_write_info(png, info);
  png_write_image(png, rows);
  png_write_end(png, nullptr);
  return true;
}

}  // namespace

RgbImage decode_image(std::span<const std::uint8_t> bytes) {
  if (is_png(bytes)) return decode_png(bytes);
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return decode_ppm(bytes);
  throw Error(ErrorCode::MalformedImage, "unrecognized image signature");
}

RgbImage read_image(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_image(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_ppm(const RgbImage& img) {
  const std::string header =
      "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.data.begin(), img.data.end());
  return out;
}

std::vector<std::uint8_t> encode_png(const RgbImage& img,
                                     const std::vector<std::pair<std::string, std::string>>& text) {
  if (img.width <= 0 || img.height <= 0) throw Error(ErrorCode::InvalidArgument, "encode_png: empty image");
  std::vector<std::uint8_t> out;
  PngWriteState state{&out};

  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  auto* base = const_cast<std::uint8_t*>(img.data.data());
  for (int y = 0; y < img.height; ++y) rows[y] = base + static_cast<std::size_t>(y) * img.width * 3;

  std::vector<png_text> chunks(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    std::memset(&chunks[i], 0, sizeof(png_text));
    chunks[i].compression = PNG_TEXT_COMPRESSION_NONE;
    chunks[i].key = const_cast<char*>(text[i].first.c_str());
    chunks[i].text = const_cast<char*>(text[i].second.c_str());
    chunks[i].text_length = text[i].second.size();
  }

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error(ErrorCode::IoError, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error(ErrorCode::IoError, "png_create_info_struct failed");
  }
  png_set_write_fn(png, &state, png_append, png_flush_noop);
  const bool ok = write_png_rows(png, info, img, chunks.data(), static_cast<int>(chunks.size()), rows.data());
  png_destroy_write_struct(&png, &info);
  if (!ok) throw Error(ErrorCode::IoError, "png encoding failed");
  return out;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorCode::IoError, "cannot open for writing: " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::IoError, "cannot open: " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

GrayImage to_gray(const RgbImage& img) {
  GrayImage out(img.width, img.height);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const double r = img.data[3 * i], g = img.data[3 * i + 1], b = img.data[3 * i + 2];
    const double y = (0.299 * r + 0.587 * g + 0.114 * b) / 255.0;
    out.data[i] = static_cast<float>(std::clamp(y, 0.0, 1.0));
  }
  return out;
}

RgbImage gray_to_rgb(const GrayImage& img) {
  RgbImage out(img.width, img.height);
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    const auto v = static_cast<std::uint8_t>(std::lround(std::clamp(img.data[i], 0.0f, 1.0f) * 255.0f));
    out.data[3 * i] = out.data[3 * i + 1] = out.data[3 * i + 2] = v;
  }
  return out;
}

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw Error(ErrorCode::InvalidSigma, "sigma must be positive, got " + std::to_string(sigma));
  }
  const int radius = static_cast<int>(std::ceil(4.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    k[i + radius] = v;
    sum += v;
  }
  for (double& v : k) v /= sum;
  return k;
}

GrayImage gaussian_blur(const GrayImage& img, double sigma) {
  const auto kernel = gaussian_kernel(sigma);
  const int radius = static_cast<int>(kernel.size() / 2);
  const int w = img.width, h = img.height;

  GrayImage tmp(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * img.at(std::clamp(x + k, 0, w - 1), y);
      tmp.at(x, y) = static_cast<float>(acc);
    }
  }
  GrayImage out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * tmp.at(x, std::clamp(y + k, 0, h - 1));
      out.at(x, y) = static_cast<float>(acc);
    }
  }
  return out;
}

GrayImage resample_half(const GrayImage& img) {
  if (img.width < 2 || img.height < 2) {
    throw Error(ErrorCode::TooSmall, "resample_half needs at least 2x2, got " + std::to_string(img.width) +
                                         "x" + std::to_string(img.height));
  }
  GrayImage out(img.width / 2, img.height / 2);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) out.at(x, y) = img.at(2 * x, 2 * y);
  return out;
}

void draw_line(RgbImage& img, int x0, int y0, int x1, int y1, Rgb color) {
  const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
  const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  for (;;) {
    if (x0 >= 0 && y0 >= 0 && x0 < img.width && y0 < img.height) {
      auto* p = img.pixel(x0, y0);
      p[0] = color.r;
      p[1] = color.g;
      p[2] = color.b;
    }
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

void blit(RgbImage& dst, const RgbImage& src, int x0, int y0) {
  for (int y = 0; y < src.height; ++y) {
    const int ty = y0 + y;
    if (ty < 0 || ty >= dst.height) continue;
    for (int x = 0; x < src.width; ++x) {
      const int tx = x0 + x;
      if (tx < 0 || tx >= dst.width) continue;
      std::memcpy(dst.pixel(tx, ty), src.pixel(x, y), 3);
    }
  }
}

}  // namespace vtonsift
