#include <cmath>
#include <fstream>
#include <random>

#include "doctest.h"
#include "epigeo/error.h"
#include "epigeo/image.h"
#include "test_util.h"

namespace epigeo {
namespace {

std::vector<std::uint8_t> Bytes(const std::string& s) { return {s.begin(), s.end()}; }

Frame NoiseFrame(int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> p(static_cast<std::size_t>(w) * h);
  for (double& v : p) v = u(rng);
  return Frame(w, h, std::move(p));
}

// Windowed statistics evaluated one window at a time.
double ScalarSsim(const Frame& a, const Frame& b, const SsimOptions& o) {
  const int r = o.window_radius;
  std::vector<double> w;
  double total = 0.0;
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      w.push_back(std::exp(-(dx * dx + dy * dy) / (2.0 * o.window_sigma * o.window_sigma)));
      total += w.back();
    }
  }
  for (double& v : w) v /= total;
  const double c1 = std::pow(o.k1 * o.dynamic_range, 2);
  const double c2 = std::pow(o.k2 * o.dynamic_range, 2);
  double sum = 0.0;
  int count = 0;
  for (int y = r; y + r < a.height(); ++y) {
    for (int x = r; x + r < a.width(); ++x) {
      double ma = 0, mb = 0;
      std::size_t k = 0;
      for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx, ++k) {
          ma += w[k] * a(x + dx, y + dy);
          mb += w[k] * b(x + dx, y + dy);
        }
      }
      double va = 0, vb = 0, cov = 0;
      k = 0;
      for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx, ++k) {
          const double da = a(x + dx, y + dy) - ma;
          const double db = b(x + dx, y + dy) - mb;
          va += w[k] * da * da;
          vb += w[k] * db * db;
          cov += w[k] * da * db;
        }
      }
      sum += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  }
  return sum / count;
}

TEST_SUITE("image") {
  TEST_CASE("decodes 8-bit PGM with endpoint scaling") {
    std::string pgm = "P5\n2 2\n255\n";
    pgm += std::string{'\0', '\xff', '\xff', '\0'};
    const Frame f = DecodeFrame(Bytes(pgm));
    REQUIRE(f.width() == 2);
    REQUIRE(f.height() == 2);
    CHECK(f(0, 0) == 0.0);
    CHECK(f(1, 0) == 1.0);
    CHECK(f(0, 1) == 1.0);
    CHECK(f(1, 1) == 0.0);
  }

  TEST_CASE("pure red RGB PNG decodes to the red luma weight") {
    const std::vector<std::uint8_t> png = {
        0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a, 0x00, 0x00, 0x00, 0x0d, 0x49, 0x48,
        0x44, 0x52, 0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x01, 0x08, 0x02, 0x00, 0x00,
        0x00, 0x90, 0x77, 0x53, 0xde, 0x00, 0x00, 0x00, 0x0c, 0x49, 0x44, 0x41, 0x54, 0x78,
        0x9c, 0x63, 0xf8, 0xcf, 0xc0, 0x00, 0x00, 0x03, 0x01, 0x01, 0x00, 0xc9, 0xfe, 0x92,
        0xef, 0x00, 0x00, 0x00, 0x00, 0x49, 0x45, 0x4e, 0x44, 0xae, 0x42, 0x60, 0x82};
    const Frame f = DecodeFrame(png);
    REQUIRE(f.size() == 1);
    CHECK(f(0, 0) == doctest::Approx(0.299).epsilon(1e-12));
  }

  TEST_CASE("PPM converts with BT.601 weights") {
    std::string ppm = "P6 1 1 255\n";
    ppm += std::string{'\0', '\xff', '\0'};
    CHECK(DecodeFrame(Bytes(ppm))(0, 0) == doctest::Approx(0.587).epsilon(1e-12));
  }

  TEST_CASE("truncated PGM body is a decode error with an offset") {
    std::string pgm = "P5\n4 4\n255\n";
    pgm += std::string(10, '\x10');
    try {
      DecodeFrame(Bytes(pgm));
      FAIL("expected DecodeError");
    } catch (const DecodeError& e) {
      CHECK(e.offset() > 0);
    }
    CHECK_THROWS_AS(DecodeFrame(Bytes("P2\n1 1\n255\n0")), DecodeError);
    CHECK_THROWS_AS(DecodeFrame(Bytes("\x89PNG\r\n\x1a\nrubbish")), DecodeError);
  }

  TEST_CASE("PGM and PNG round trips") {
    const Frame f = NoiseFrame(13, 7, 3);
    for (int depth : {8, 16}) {
      const double step = depth == 8 ? 1.0 / 255 : 1.0 / 65535;
      for (const auto& bytes : {EncodePgm(f, depth), EncodePng(f, depth)}) {
        const Frame g = DecodeFrame(bytes);
        REQUIRE(g.SameShape(f));
        for (int y = 0; y < f.height(); ++y) {
          for (int x = 0; x < f.width(); ++x) CHECK(std::abs(g(x, y) - f(x, y)) <= 0.5 * step + 1e-12);
        }
      }
    }
  }

  TEST_CASE("frame rejects out-of-range or mis-sized pixels") {
    CHECK_THROWS_AS(Frame(2, 1, std::vector<double>{0.5, 1.5}), ContractError);
    CHECK_THROWS_AS(Frame(2, 2, std::vector<double>{0.5}), ContractError);
    CHECK_THROWS_AS(Frame(0, 2, 0.0), ContractError);
  }

  TEST_CASE("frame files are ordered by their numeric part") {
    const auto dir = testing::TempDir("list");
    for (const char* name : {"frame_10.pgm", "frame_2.pgm", "frame_1.png", "notes.txt"}) {
      std::ofstream(dir / name) << "x";
    }
    const auto files = ListFrameFiles(dir);
    REQUIRE(files.size() == 3);
    CHECK(files[0].filename() == "frame_1.png");
    CHECK(files[1].filename() == "frame_2.pgm");
    CHECK(files[2].filename() == "frame_10.pgm");
  }

  TEST_CASE("reflect padding indices") {
    CHECK(ReflectIndex(-1, 5) == 0);
    CHECK(ReflectIndex(-2, 5) == 1);
    CHECK(ReflectIndex(5, 5) == 4);
    CHECK(ReflectIndex(6, 5) == 3);
    CHECK(ReflectIndex(2, 5) == 2);
  }

  TEST_CASE("Gaussian kernel is normalized with radius ceil(3 sigma)") {
    const auto k = GaussianKernel(1.2);
    CHECK(k.size() == 2 * 4 + 1);
    double sum = 0.0;
    for (double v : k) sum += v;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(k[4] > k[3]);
    CHECK(k[3] == doctest::Approx(k[5]).epsilon(1e-15));
  }

  TEST_CASE("blurring a constant image keeps it constant") {
    const Image c(20, 15, 0.37);
    for (double s : {0.5, 1.0, 3.0, 7.0}) {
      const Image b = GaussianBlur(c, s);
      for (double v : b.data) CHECK(v == doctest::Approx(0.37).epsilon(1e-12));
    }
  }

  TEST_CASE("impulse response equals the product of kernel center weights") {
    Image im(21, 21, 0.0);
    im(10, 10) = 1.0;
    const Image b = GaussianBlur(im, 1.0);
    const auto k = GaussianKernel(1.0);
    const double center = k[k.size() / 2];
    CHECK(b(10, 10) == doctest::Approx(center * center).epsilon(1e-14));
    double sum = 0.0;
    for (double v : b.data) sum += v;
    CHECK(std::abs(sum - 1.0) < 1e-6);
  }

  TEST_CASE("resize bounds the larger side") {
    const Frame f = NoiseFrame(100, 40, 1);
    const Frame g = ResizeToMaxDim(f, 50);
    CHECK(std::max(g.width(), g.height()) <= 50);
    CHECK(g.width() == 50);
    CHECK(ResizeToMaxDim(f, 200).SameShape(f));
  }

  TEST_CASE("ssim of a frame with itself is exactly one") {
    const Frame f = NoiseFrame(32, 24, 5);
    CHECK(Ssim(f, f) == 1.0);
  }

  TEST_CASE("inverted checkerboard is anticorrelated") {
    Frame a(32, 32, 0.0), b(32, 32, 0.0);
    for (int y = 0; y < 32; ++y) {
      for (int x = 0; x < 32; ++x) {
        a(x, y) = ((x / 4 + y / 4) % 2) ? 1.0 : 0.0;
        b(x, y) = 1.0 - a(x, y);
      }
    }
    CHECK(Ssim(a, b) < 0.0);
  }

  TEST_CASE("ssim of independent noise matches a scalar-loop oracle") {
    const Frame a = NoiseFrame(64, 64, 7);
    const Frame b = NoiseFrame(64, 64, 8);
    const double expected = ScalarSsim(a, b, {});
    CHECK(Ssim(a, b) == doctest::Approx(expected).epsilon(1e-10));
    CHECK(std::abs(expected) < 0.05);
  }

  TEST_CASE("ssim contract errors") {
    CHECK_THROWS_AS(Ssim(Frame(20, 20), Frame(20, 21)), ContractError);
    CHECK_THROWS_AS(Ssim(Frame(8, 20), Frame(8, 20)), ContractError);
  }

  TEST_CASE("motion level of static and noise videos") {
    const Frame f = NoiseFrame(40, 30, 2);
    const std::vector<Frame> still(5, f);
    CHECK(MotionLevel(still) == 1.0);
    std::vector<Frame> noise;
    for (int k = 0; k < 5; ++k) noise.push_back(NoiseFrame(40, 30, 100 + k));
    CHECK(std::abs(MotionLevel(noise)) < 0.05);
    CHECK_THROWS_AS(MotionLevel(std::vector<Frame>{f}), ContractError);
  }
}

}  // namespace
}  // namespace epigeo
