#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace epigeo {

// Single-channel luminance image with values in [0, 1], row-major.
class Frame {
 public:
  Frame() = default;
  // Constant frame.
  Frame(int width, int height, double value = 0.0);
  // Takes ownership of `pixels`; validates size and range.
  Frame(int width, int height, std::vector<double> pixels);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return pixels_.size(); }
  bool empty() const { return pixels_.empty(); }

  double operator()(int x, int y) const { return pixels_[Index(x, y)]; }
  double& operator()(int x, int y) { return pixels_[Index(x, y)]; }

  std::span<const double> pixels() const { return pixels_; }
  std::span<double> mutable_pixels() { return pixels_; }

  bool SameShape(const Frame& other) const {
    return width_ == other.width_ && height_ == other.height_;
  }

 private:
  std::size_t Index(int x, int y) const {
    return static_cast<std::size_t>(y) * width_ + x;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<double> pixels_;
};

// Intermediate float image used by filtering; values are unconstrained.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, double value = 0.0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h, value) {}
  explicit Image(const Frame& frame);

  double operator()(int x, int y) const {
    return data[static_cast<std::size_t>(y) * width + x];
  }
  double& operator()(int x, int y) {
    return data[static_cast<std::size_t>(y) * width + x];
  }
};

enum class ImageFormat { kPgm, kPng };

// BT.601 luma.
inline double Luminance(double r, double g, double b) {
  return 0.299 * r + 0.587 * g + 0.114 * b;
}

// Decodes binary PGM/PPM (P5/P6, 8 or 16 bit) or PNG. Values are scaled by
// 1/maxval, RGB is converted with BT.601 weights. Throws DecodeError.
Frame DecodeFrame(std::span<const std::uint8_t> bytes, ImageFormat format);
// Picks the format from the magic bytes.
Frame DecodeFrame(std::span<const std::uint8_t> bytes);

Frame ReadFrame(const std::filesystem::path& path);
// Writes a binary PGM with the given bit depth (8 or 16).
void WritePgm(const Frame& frame, const std::filesystem::path& path,
              int bit_depth = 8);
std::vector<std::uint8_t> EncodePgm(const Frame& frame, int bit_depth = 8);
std::vector<std::uint8_t> EncodePng(const Frame& frame, int bit_depth = 8);

// Image files (.pgm/.ppm/.png) in `dir`, ordered by the numeric part of the
// file name (frame_2 before frame_10), then lexicographically.
std::vector<std::filesystem::path> ListFrameFiles(
    const std::filesystem::path& dir);
std::vector<Frame> ReadFrameDirectory(const std::filesystem::path& dir);

// Mirror index for reflect padding: -1 -> 0, -2 -> 1, n -> n-1.
int ReflectIndex(int i, int n);

// Normalized discrete Gaussian with radius ceil(3 sigma) unless `radius` >= 0.
std::vector<double> GaussianKernel(double sigma, int radius = -1);

// Separable convolution with reflect padding; output has the input shape.
Image SeparableConvolve(const Image& image, std::span<const double> kernel);
Image GaussianBlur(const Image& image, double sigma);
Frame GaussianBlur(const Frame& frame, double sigma);

// Blurs with a matching anti-alias kernel and bilinearly resamples so that
// max(width, height) <= max_dim. Returns the frame unchanged if already small.
Frame ResizeToMaxDim(const Frame& frame, int max_dim);

struct SsimOptions {
  int window_radius = 5;  // 11x11 window
  double window_sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

// Mean SSIM over all window positions fully inside the image.
double Ssim(const Frame& a, const Frame& b, const SsimOptions& options = {});

// Mean SSIM between the first frame and every later frame.
double MotionLevel(std::span<const Frame> frames,
                   const SsimOptions& options = {});

}  // namespace epigeo
