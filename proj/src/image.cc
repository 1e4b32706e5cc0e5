#include "epigeo/image.h"

#include <algorithm>
#include <cmath>

#include "epigeo/error.h"

namespace epigeo {

Frame::Frame(int width, int height, double value)
    : Frame(width, height,
            std::vector<double>(static_cast<std::size_t>(std::max(width, 0)) *
                                    std::max(height, 0),
                                value)) {}

Frame::Frame(int width, int height, std::vector<double> pixels)
    : width_(width), height_(height), pixels_(std::move(pixels)) {
  EPIGEO_CHECK(width > 0 && height > 0, "Frame dimensions must be positive");
  EPIGEO_CHECK(pixels_.size() == static_cast<std::size_t>(width) * height,
               "Frame buffer length must equal width*height");
  for (const double v : pixels_) {
    EPIGEO_CHECK(std::isfinite(v) && v >= 0.0 && v <= 1.0,
                 "Frame pixel values must be finite and in [0, 1]");
  }
}

Image::Image(const Frame& frame)
    : width(frame.width()),
      height(frame.height()),
      data(frame.pixels().begin(), frame.pixels().end()) {}

int ReflectIndex(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

std::vector<double> GaussianKernel(double sigma, int radius) {
  EPIGEO_CHECK(sigma > 0.0, "Gaussian sigma must be positive");
  if (radius < 0) radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double w = std::exp(-0.5 * i * i / (sigma * sigma));
    kernel[i + radius] = w;
    sum += w;
  }
  for (double& w : kernel) w /= sum;
  return kernel;
}

Image SeparableConvolve(const Image& image, std::span<const double> kernel) {
  EPIGEO_CHECK(kernel.size() % 2 == 1, "kernel length must be odd");
  const int radius = static_cast<int>(kernel.size() / 2);
  const int w = image.width;
  const int h = image.height;

  Image horizontal(w, h);
  std::vector<double> row(w + 2 * radius);
  for (int y = 0; y < h; ++y) {
    for (int x = -radius; x < w + radius; ++x) {
      row[x + radius] = image(ReflectIndex(x, w), y);
    }
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < kernel.size(); ++k) {
        acc += kernel[k] * row[x + k];
      }
      horizontal(x, y) = acc;
    }
  }

  Image out(w, h);
  std::vector<int> rows(h + 2 * radius);
  for (int y = -radius; y < h + radius; ++y) {
    rows[y + radius] = ReflectIndex(y, h);
  }
  std::vector<double> acc(w);
  for (int y = 0; y < h; ++y) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t k = 0; k < kernel.size(); ++k) {
      const double* src =
          &horizontal.data[static_cast<std::size_t>(rows[y + k]) * w];
      const double wk = kernel[k];
      for (int x = 0; x < w; ++x) acc[x] += wk * src[x];
    }
    std::copy(acc.begin(), acc.end(),
              out.data.begin() + static_cast<std::size_t>(y) * w);
  }
  return out;
}

Image GaussianBlur(const Image& image, double sigma) {
  const std::vector<double> kernel = GaussianKernel(sigma);
  return SeparableConvolve(image, kernel);
}

Frame GaussianBlur(const Frame& frame, double sigma) {
  Image blurred = GaussianBlur(Image(frame), sigma);
  // Convex combination of [0,1] values; clamp round-off only.
  for (double& v : blurred.data) v = std::clamp(v, 0.0, 1.0);
  return Frame(blurred.width, blurred.height, std::move(blurred.data));
}

Frame ResizeToMaxDim(const Frame& frame, int max_dim) {
  EPIGEO_CHECK(max_dim > 0, "max_dim must be positive");
  const int longest = std::max(frame.width(), frame.height());
  if (longest <= max_dim) return frame;
  const double scale = static_cast<double>(max_dim) / longest;
  const int w = std::max(1, static_cast<int>(std::lround(frame.width() * scale)));
  const int h =
      std::max(1, static_cast<int>(std::lround(frame.height() * scale)));
  // Anti-alias: sigma of half the decimation factor.
  const Image src = GaussianBlur(Image(frame), 0.5 / scale);
  std::vector<double> out(static_cast<std::size_t>(w) * h);
  const double sx = static_cast<double>(frame.width()) / w;
  const double sy = static_cast<double>(frame.height()) / h;
  for (int y = 0; y < h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0,
                                 static_cast<double>(frame.height() - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, frame.height() - 1);
    const double ay = fy - y0;
    for (int x = 0; x < w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0,
                                   static_cast<double>(frame.width() - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, frame.width() - 1);
      const double ax = fx - x0;
      const double v = (1 - ay) * ((1 - ax) * src(x0, y0) + ax * src(x1, y0)) +
                       ay * ((1 - ax) * src(x0, y1) + ax * src(x1, y1));
      out[static_cast<std::size_t>(y) * w + x] = std::clamp(v, 0.0, 1.0);
    }
  }
  return Frame(w, h, std::move(out));
}

namespace {

// 1-D "valid" correlation along both axes: output shrinks by 2*radius.
Image ValidFilter(const Image& image, std::span<const double> kernel) {
  const int r = static_cast<int>(kernel.size() / 2);
  const int w = image.width - 2 * r;
  const int h = image.height - 2 * r;
  Image horizontal(w, image.height);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < kernel.size(); ++k) {
        acc += kernel[k] * image(x + static_cast<int>(k), y);
      }
      horizontal(x, y) = acc;
    }
  }
  Image out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < kernel.size(); ++k) {
        acc += kernel[k] * horizontal(x, y + static_cast<int>(k));
      }
      out(x, y) = acc;
    }
  }
  return out;
}

Image Product(const Image& a, const Image& b) {
  Image out(a.width, a.height);
  for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] * b.data[i];
  return out;
}

}  // namespace

double Ssim(const Frame& a, const Frame& b, const SsimOptions& options) {
  EPIGEO_CHECK(a.SameShape(b), "ssim: frames must have identical dimensions");
  const int window = 2 * options.window_radius + 1;
  EPIGEO_CHECK(std::min(a.width(), a.height()) >= window,
               "ssim: minimum frame dimension must be at least the window size");

  const std::vector<double> kernel =
      GaussianKernel(options.window_sigma, options.window_radius);
  const Image ia(a);
  const Image ib(b);
  const Image mu_a = ValidFilter(ia, kernel);
  const Image mu_b = ValidFilter(ib, kernel);
  const Image e_aa = ValidFilter(Product(ia, ia), kernel);
  const Image e_bb = ValidFilter(Product(ib, ib), kernel);
  const Image e_ab = ValidFilter(Product(ia, ib), kernel);

  const double c1 = std::pow(options.k1 * options.dynamic_range, 2);
  const double c2 = std::pow(options.k2 * options.dynamic_range, 2);

  double sum = 0.0;
  for (std::size_t i = 0; i < mu_a.data.size(); ++i) {
    const double ma = mu_a.data[i];
    const double mb = mu_b.data[i];
    const double var_a = e_aa.data[i] - ma * ma;
    const double var_b = e_bb.data[i] - mb * mb;
    const double cov = e_ab.data[i] - ma * mb;
    const double num = (2.0 * (ma * mb) + c1) * (2.0 * cov + c2);
    const double den = (ma * ma + mb * mb + c1) * (var_a + var_b + c2);
    sum += num / den;
  }
  return sum / static_cast<double>(mu_a.data.size());
}

double MotionLevel(std::span<const Frame> frames, const SsimOptions& options) {
  EPIGEO_CHECK(frames.size() >= 2, "motion level needs at least 2 frames");
  double sum = 0.0;
  for (std::size_t k = 1; k < frames.size(); ++k) {
    sum += Ssim(frames[0], frames[k], options);
  }
  return sum / static_cast<double>(frames.size() - 1);
}

}  // namespace epigeo
