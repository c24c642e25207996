#pragma once

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "gsn/error.hpp"
#include "gsn/numkit.hpp"
#include "gsn/rng.hpp"

namespace gsn {

inline constexpr std::uint32_t kIdxImages = 0x00000803;
inline constexpr std::uint32_t kIdxLabels = 0x00000801;

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

namespace detail {

inline std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) |
         (std::uint32_t{b[at + 2]} << 8) | std::uint32_t{b[at + 3]};
}

inline std::string hex32(std::uint32_t v) {
  char buf[11];
  std::snprintf(buf, sizeof buf, "0x%08X", v);
  return buf;
}

}  // namespace detail

/// Parses an IDX image (0x803) or label (0x801) file. Images come back one
/// per row with pixels scaled to [0, 1]; labels as a single column of raw
/// values.
inline Tensor2 parse_idx(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) throw LengthError("idx: file shorter than its header");
  const std::uint32_t magic = detail::read_be32(bytes, 0);
  std::size_t header = 0, cols = 1;
  if (magic == kIdxImages) {
    header = 16;
    if (bytes.size() < header) throw LengthError("idx: image header truncated");
    cols = std::size_t{detail::read_be32(bytes, 8)} * detail::read_be32(bytes, 12);
  } else if (magic == kIdxLabels) {
    header = 8;
  } else {
    throw FormatError("idx: bad magic " + detail::hex32(magic));
  }
  const std::size_t items = detail::read_be32(bytes, 4);
  const std::size_t need = header + items * cols;
  if (bytes.size() < need)
    throw LengthError("idx: payload has " + std::to_string(bytes.size() - header) + " bytes, header announces " +
                      std::to_string(items * cols));
  Tensor2 out(items, cols);
  const double scale = magic == kIdxImages ? 1.0 / 255.0 : 1.0;
  for (std::size_t i = 0; i < items * cols; ++i) out.data()[i] = bytes[header + i] * scale;
  return out;
}

inline Tensor2 load_idx(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error("idx file not found: " + path.string());
  const auto bytes = read_bytes(path);
  return parse_idx(bytes);
}

/// Averages non-overlapping 2x2 blocks of square-ish images stored as rows.
inline Tensor2 downsample2x2(const Tensor2& images, std::size_t width, std::size_t height) {
  if (images.cols() != width * height)
    throw ShapeError("downsample2x2: rows of " + std::to_string(images.cols()) + " for " +
                     std::to_string(width) + "x" + std::to_string(height));
  if (width % 2 || height % 2) throw ShapeError("downsample2x2: odd image size");
  const std::size_t w2 = width / 2, h2 = height / 2;
  Tensor2 out(images.rows(), w2 * h2);
  for (std::size_t n = 0; n < images.rows(); ++n) {
    const auto in = images.row(n);
    auto o = out.row(n);
    for (std::size_t y = 0; y < h2; ++y)
      for (std::size_t x = 0; x < w2; ++x) {
        const std::size_t a = 2 * y * width + 2 * x;
        o[y * w2 + x] = 0.25 * (in[a] + in[a + 1] + in[a + width] + in[a + width + 1]);
      }
  }
  return out;
}

/// 1 where the value exceeds the threshold, else 0.
inline Tensor2 binarize(Tensor2 m, double threshold) {
  for (double& v : m.data()) v = v > threshold ? 1.0 : 0.0;
  return m;
}

/// Leading `n` rows.
inline Tensor2 head_rows(const Tensor2& m, std::size_t n) {
  n = std::min(n, m.rows());
  const auto d = m.data();
  return Tensor2(n, m.cols(), std::vector<double>(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(n * m.cols())));
}

/// Rows [begin, end).
inline Tensor2 slice_rows(const Tensor2& m, std::size_t begin, std::size_t end) {
  if (begin > end || end > m.rows()) throw RangeError("slice_rows: bad range");
  const auto d = m.data();
  return Tensor2(end - begin, m.cols(),
                 std::vector<double>(d.begin() + static_cast<std::ptrdiff_t>(begin * m.cols()),
                                     d.begin() + static_cast<std::ptrdiff_t>(end * m.cols())));
}

// ---------------------------------------------------------------------------
// Synthetic data.

/// n i.i.d. state indices drawn from `spec`, one per row.
inline Tensor2 synth_discrete(std::span<const double> spec, std::size_t n, std::uint64_t seed) {
  double s = 0.0;
  for (double p : spec) {
    if (!(p >= 0.0)) throw ParameterError("synth_discrete: negative probability");
    s += p;
  }
  if (spec.empty() || std::abs(s - 1.0) > 1e-9)
    throw ParameterError("synth_discrete: spec sums to " + std::to_string(s));
  RngStream rng(seed);
  Tensor2 out(n, 1);
  for (std::size_t i = 0; i < n; ++i) out(i, 0) = static_cast<double>(rng.categorical(spec));
  return out;
}

/// 10-dimensional mixture of three correlated Gaussians. The mixture itself
/// is fixed; `seed` only drives the draws.
inline Tensor2 synth_continuous(std::size_t n, std::uint64_t seed, std::size_t dim = 10) {
  constexpr std::size_t kComponents = 3;
  RngStream shape(0x5EEDC0DEULL);
  std::vector<Vector> means(kComponents, Vector(dim));
  std::vector<Tensor2> chol(kComponents, Tensor2(dim, dim));
  for (std::size_t c = 0; c < kComponents; ++c) {
    for (double& m : means[c]) m = 2.0 * shape.normal();
    for (std::size_t i = 0; i < dim; ++i) {
      chol[c](i, i) = 0.5 + 0.5 * shape.uniform();
      for (std::size_t j = 0; j < i; ++j) chol[c](i, j) = 0.3 * shape.normal();
    }
  }
  RngStream rng(seed);
  Tensor2 out(n, dim);
  Vector z(dim);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t c = rng.below(kComponents);
    for (double& v : z) v = rng.normal();
    for (std::size_t i = 0; i < dim; ++i) {
      double v = means[c][i];
      for (std::size_t j = 0; j <= i; ++j) v += chol[c](i, j) * z[j];
      out(r, i) = v;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// PGM strips.

inline std::uint8_t to_gray(double v) {
  if (!(v >= 0.0 && v <= 1.0)) throw RangeError("pgm: value " + std::to_string(v) + " outside [0, 1]");
  return static_cast<std::uint8_t>(std::floor(v * 255.0 + 0.5));
}

/// Binary P5 image tiling one sample per tile, `per_row` tiles per line.
inline std::string pgm_bytes(const Tensor2& samples, std::size_t width, std::size_t height,
                             std::size_t per_row = 10) {
  if (samples.rows() == 0) throw ParameterError("pgm: no samples");
  if (samples.cols() != width * height)
    throw ShapeError("pgm: rows of " + std::to_string(samples.cols()) + " for " + std::to_string(width) +
                     "x" + std::to_string(height) + " tiles");
  if (per_row < 1) throw ParameterError("pgm: per_row must be >= 1");
  const std::size_t tiles_x = std::min(per_row, samples.rows());
  const std::size_t tiles_y = (samples.rows() + per_row - 1) / per_row;
  const std::size_t w = tiles_x * width, h = tiles_y * height;
  std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  const std::size_t header = out.size();
  out.resize(header + w * h, '\0');
  for (std::size_t n = 0; n < samples.rows(); ++n) {
    const std::size_t ox = (n % per_row) * width, oy = (n / per_row) * height;
    const auto row = samples.row(n);
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x)
        out[header + (oy + y) * w + ox + x] = static_cast<char>(to_gray(row[y * width + x]));
  }
  return out;
}

inline void write_pgm(const Tensor2& samples, std::size_t width, std::size_t height,
                      const std::filesystem::path& path, std::size_t per_row = 10) {
  write_bytes(path, pgm_bytes(samples, width, height, per_row));
}

struct PgmImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
};

inline PgmImage parse_pgm(std::span<const std::uint8_t> bytes) {
  std::string head(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(bytes.size(), 64)));
  std::istringstream is(head);
  std::string magic;
  PgmImage img;
  int maxval = 0;
  if (!(is >> magic >> img.width >> img.height >> maxval) || magic != "P5" || maxval != 255)
    throw FormatError("pgm: unsupported header");
  const auto offset = static_cast<std::size_t>(is.tellg()) + 1;
  if (bytes.size() < offset + img.width * img.height) throw LengthError("pgm: truncated payload");
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset),
                    bytes.begin() + static_cast<std::ptrdiff_t>(offset + img.width * img.height));
  return img;
}

// ---------------------------------------------------------------------------
// Binary matrix files: "GSNMAT01", then rows, cols, seed, config hash as
// little-endian u64, then rows*cols little-endian doubles.

inline constexpr char kMatrixMagic[8] = {'G', 'S', 'N', 'M', 'A', 'T', '0', '1'};

struct MatrixFile {
  Tensor2 matrix;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
};

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFU));
}

inline std::uint64_t get_u64(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{b[at + i]} << (8 * i);
  return v;
}

}  // namespace detail

inline std::string matrix_bytes(const MatrixFile& f) {
  std::string out(kMatrixMagic, sizeof kMatrixMagic);
  detail::put_u64(out, f.matrix.rows());
  detail::put_u64(out, f.matrix.cols());
  detail::put_u64(out, f.seed);
  detail::put_u64(out, f.config_hash);
  for (double v : f.matrix.data()) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

inline MatrixFile parse_matrix(std::span<const std::uint8_t> b) {
  if (b.size() < 40) throw LengthError("matrix file: header truncated");
  if (std::memcmp(b.data(), kMatrixMagic, sizeof kMatrixMagic) != 0)
    throw FormatError("matrix file: bad magic");
  const std::size_t rows = detail::get_u64(b, 8), cols = detail::get_u64(b, 16);
  if (cols != 0 && rows > (b.size() - 40) / 8 / cols) throw LengthError("matrix file: payload truncated");
  if (b.size() != 40 + rows * cols * 8) throw LengthError("matrix file: payload size mismatch");
  MatrixFile f{Tensor2(rows, cols), detail::get_u64(b, 24), detail::get_u64(b, 32)};
  for (std::size_t i = 0; i < rows * cols; ++i)
    f.matrix.data()[i] = std::bit_cast<double>(detail::get_u64(b, 40 + 8 * i));
  return f;
}

inline void write_matrix(const std::filesystem::path& path, const MatrixFile& f) {
  write_bytes(path, matrix_bytes(f));
}

inline MatrixFile read_matrix(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  return parse_matrix(bytes);
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace gsn
