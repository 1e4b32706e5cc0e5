#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstring>
#include <fstream>
#include <iterator>
#include <optional>

#include "epigeo/error.h"
#include "epigeo/image.h"

namespace epigeo {
namespace {

namespace fs = std::filesystem;

// Netpbm header tokenizer; tracks the byte offset for error messages.
class PnmReader {
 public:
  PnmReader(std::span<const std::uint8_t> bytes, std::size_t start)
      : bytes_(bytes), pos_(start) {}

  std::size_t offset() const { return pos_; }

  void SkipSpaceAndComments() {
    while (pos_ < bytes_.size()) {
      const char c = static_cast<char>(bytes_[pos_]);
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  int ReadInt(const char* field) {
    SkipSpaceAndComments();
    const std::size_t start = pos_;
    long value = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + (bytes_[pos_] - '0');
      if (value > (1 << 24)) throw DecodeError(std::string("PNM ") + field + " too large", start);
      ++pos_;
    }
    if (pos_ == start) {
      throw DecodeError(std::string("PNM header: expected ") + field, start);
    }
    return static_cast<int>(value);
  }

  // Exactly one whitespace byte separates the header from the raster.
  void ReadRasterSeparator() {
    if (pos_ >= bytes_.size() ||
        !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      throw DecodeError("PNM header: missing whitespace before raster", pos_);
    }
    ++pos_;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

Frame DecodePnm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw DecodeError("not a binary PGM/PPM (expected P5 or P6 magic)", 0);
  }
  const int channels = bytes[1] == '5' ? 1 : 3;
  PnmReader body(bytes, 2);
  const int width = body.ReadInt("width");
  const int height = body.ReadInt("height");
  const int maxval = body.ReadInt("maxval");
  body.ReadRasterSeparator();
  const std::size_t pos = body.offset();
  if (width <= 0 || height <= 0) throw DecodeError("PNM: zero dimension", 2);
  if (maxval <= 0 || maxval > 65535) {
    throw DecodeError("PNM: maxval must be in [1, 65535]", pos - 1);
  }
  const int bytes_per_sample = maxval < 256 ? 1 : 2;
  const std::size_t count = static_cast<std::size_t>(width) * height;
  const std::size_t needed = count * channels * bytes_per_sample;
  if (bytes.size() - pos < needed) {
    throw DecodeError("PNM: truncated raster (" + std::to_string(needed) +
                          " bytes expected)",
                      bytes.size());
  }
  std::vector<double> pixels(count);
  const double scale = 1.0 / maxval;
  auto sample = [&](std::size_t i) -> double {
    const std::size_t at = pos + i * bytes_per_sample;
    const int raw = bytes_per_sample == 1 ? bytes[at] : (bytes[at] << 8) | bytes[at + 1];
    if (raw > maxval) throw DecodeError("PNM: sample exceeds maxval", at);
    return raw * scale;
  };
  for (std::size_t i = 0; i < count; ++i) {
    if (channels == 1) {
      pixels[i] = sample(i);
    } else {
      pixels[i] = std::clamp(
          Luminance(sample(3 * i), sample(3 * i + 1), sample(3 * i + 2)), 0.0, 1.0);
    }
  }
  return Frame(width, height, std::move(pixels));
}

struct PngSource {
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;
  std::string error;
};

void PngRead(png_structp png, png_bytep out, png_size_t length) {
  auto* src = static_cast<PngSource*>(png_get_io_ptr(png));
  if (src->bytes.size() - src->pos < length) {
    src->error = "PNG: unexpected end of stream";
    png_error(png, "truncated");
  }
  std::memcpy(out, src->bytes.data() + src->pos, length);
  src->pos += length;
}

void PngError(png_structp png, png_const_charp message) {
  auto* src = static_cast<PngSource*>(png_get_io_ptr(png));
  if (src != nullptr && src->error.empty()) src->error = std::string("PNG: ") + message;
  png_longjmp(png, 1);
}

void PngWarning(png_structp, png_const_charp) {}

Frame DecodePng(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
    throw DecodeError("not a PNG (bad signature)", 0);
  }
  PngSource src{bytes, 8, {}};
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, PngError, PngWarning);
  png_infop info = png_create_info_struct(png);
  png_set_read_fn(png, &src, PngRead);
  png_set_sig_bytes(png, 8);

  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> raster;
  std::size_t row_bytes = 0;
  int bit_depth = 8;
  // No C++ objects with non-trivial destructors are created between setjmp
  // and the reads below.
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DecodeError(src.error.empty() ? "PNG: decode failure" : src.error,
                      src.pos);
  }
  png_read_info(png, info);
  png_set_expand(png);           // palette / low-bit gray -> 8 bit
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  width = static_cast<int>(png_get_image_width(png, info));
  height = static_cast<int>(png_get_image_height(png, info));
  channels = png_get_channels(png, info);
  bit_depth = png_get_bit_depth(png, info);
  row_bytes = png_get_rowbytes(png, info);
  raster.resize(row_bytes * height);
  {
    std::vector<png_bytep> rows(height);
    for (int y = 0; y < height; ++y) rows[y] = raster.data() + y * row_bytes;
    png_read_image(png, rows.data());
  }
  png_destroy_read_struct(&png, &info, nullptr);

  if (channels != 1 && channels != 3) {
    throw DecodeError("PNG: unsupported channel count " + std::to_string(channels), 8);
  }
  const double scale = bit_depth == 16 ? 1.0 / 65535.0 : 1.0 / 255.0;
  std::vector<double> pixels(static_cast<std::size_t>(width) * height);
  for (int y = 0; y < height; ++y) {
    const std::uint8_t* row = raster.data() + y * row_bytes;
    for (int x = 0; x < width; ++x) {
      auto sample = [&](int c) -> double {
        const int i = x * channels + c;
        return bit_depth == 16 ? ((row[2 * i] << 8) | row[2 * i + 1]) * scale
                               : row[i] * scale;
      };
      pixels[static_cast<std::size_t>(y) * width + x] =
          channels == 1 ? sample(0)
                        : std::clamp(Luminance(sample(0), sample(1), sample(2)),
                                     0.0, 1.0);
    }
  }
  return Frame(width, height, std::move(pixels));
}

void PngWrite(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

void PngFlush(png_structp) {}

int Quantize(double v, int maxval) {
  return static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * maxval));
}

std::optional<long> NumericKey(const std::string& stem) {
  std::string digits;
  for (auto it = stem.rbegin(); it != stem.rend() && std::isdigit(*it); ++it) {
    digits.insert(digits.begin(), *it);
  }
  if (digits.empty()) {
    for (char c : stem) {
      if (std::isdigit(static_cast<unsigned char>(c))) digits.push_back(c);
      else if (!digits.empty()) break;
    }
  }
  if (digits.empty() || digits.size() > 15) return std::nullopt;
  return std::stol(digits);
}

}  // namespace

Frame DecodeFrame(std::span<const std::uint8_t> bytes, ImageFormat format) {
  return format == ImageFormat::kPgm ? DecodePnm(bytes) : DecodePng(bytes);
}

Frame DecodeFrame(std::span<const std::uint8_t> bytes) {
  if (bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0) {
    return DecodePng(bytes);
  }
  return DecodePnm(bytes);
}

Frame ReadFrame(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  try {
    return DecodeFrame(bytes);
  } catch (const DecodeError& e) {
    throw DecodeError(path.string() + ": " + e.what(), e.offset());
  }
}

std::vector<std::uint8_t> EncodePgm(const Frame& frame, int bit_depth) {
  EPIGEO_CHECK(bit_depth == 8 || bit_depth == 16, "PGM bit depth must be 8 or 16");
  const int maxval = bit_depth == 8 ? 255 : 65535;
  const std::string header = "P5\n" + std::to_string(frame.width()) + " " +
                             std::to_string(frame.height()) + "\n" +
                             std::to_string(maxval) + "\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + frame.size() * (bit_depth / 8));
  for (const double v : frame.pixels()) {
    const int q = Quantize(v, maxval);
    if (bit_depth == 16) out.push_back(static_cast<std::uint8_t>(q >> 8));
    out.push_back(static_cast<std::uint8_t>(q & 0xff));
  }
  return out;
}

void WritePgm(const Frame& frame, const fs::path& path, int bit_depth) {
  const std::vector<std::uint8_t> bytes = EncodePgm(frame, bit_depth);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

std::vector<std::uint8_t> EncodePng(const Frame& frame, int bit_depth) {
  EPIGEO_CHECK(bit_depth == 8 || bit_depth == 16, "PNG bit depth must be 8 or 16");
  std::vector<std::uint8_t> out;
  const int maxval = bit_depth == 8 ? 255 : 65535;
  const std::size_t row_bytes = static_cast<std::size_t>(frame.width()) * (bit_depth / 8);
  std::vector<std::uint8_t> raster(row_bytes * frame.height());
  for (int y = 0; y < frame.height(); ++y) {
    for (int x = 0; x < frame.width(); ++x) {
      const int q = Quantize(frame(x, y), maxval);
      std::uint8_t* p = raster.data() + y * row_bytes + x * (bit_depth / 8);
      if (bit_depth == 16) {
        p[0] = static_cast<std::uint8_t>(q >> 8);
        p[1] = static_cast<std::uint8_t>(q & 0xff);
      } else {
        p[0] = static_cast<std::uint8_t>(q);
      }
    }
  }
  std::vector<png_bytep> rows(frame.height());
  for (int y = 0; y < frame.height(); ++y) rows[y] = raster.data() + y * row_bytes;

  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, PngError, PngWarning);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("PNG encode failure");
  }
  png_set_write_fn(png, &out, PngWrite, PngFlush);
  png_set_IHDR(png, info, frame.width(), frame.height(), bit_depth,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

std::vector<fs::path> ListFrameFiles(const fs::path& dir) {
  if (!fs::is_directory(dir)) {
    throw std::runtime_error("not a directory: " + dir.string());
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    if (ext == ".pgm" || ext == ".ppm" || ext == ".png") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end(), [](const fs::path& a, const fs::path& b) {
    const auto ka = NumericKey(a.stem().string());
    const auto kb = NumericKey(b.stem().string());
    if (ka && kb && *ka != *kb) return *ka < *kb;
    if (ka.has_value() != kb.has_value()) return ka.has_value();
    return a.filename().string() < b.filename().string();
  });
  return files;
}

std::vector<Frame> ReadFrameDirectory(const fs::path& dir) {
  std::vector<Frame> frames;
  for (const fs::path& file : ListFrameFiles(dir)) {
    frames.push_back(ReadFrame(file));
  }
  return frames;
}

}  // namespace epigeo
