#pragma once

// Embedding sets: the N x D float matrices every metric and kernel consumes,
// their T2AVEMB1 binary encoding, pair manifests, and the row-level
// transformations used to assemble validation mixes.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "linalg.hpp"

namespace t2av {

enum class Modality { audio, video, text, latent, probs };

inline std::string_view to_string(Modality m) noexcept {
  switch (m) {
    case Modality::audio: return "audio";
    case Modality::video: return "video";
    case Modality::text: return "text";
    case Modality::latent: return "latent";
    case Modality::probs: return "probs";
  }
  return "latent";
}

/// N x D matrix of f32 embeddings. When segments_per_clip (T) is positive the
/// rows are grouped clip-major, segment-minor and N is a multiple of T.
class EmbeddingSet {
 public:
  EmbeddingSet() = default;

  EmbeddingSet(std::size_t dim, std::size_t count, std::size_t segments_per_clip,
               Modality modality, std::vector<float> data)
      : dim_(dim), count_(count), segments_(segments_per_clip), modality_(modality),
        data_(std::move(data)) {
    validate();
  }

  /// Zero-filled set of the given shape.
  static EmbeddingSet zeros(std::size_t dim, std::size_t count, std::size_t segments_per_clip = 0,
                            Modality modality = Modality::latent) {
    return {dim, count, segments_per_clip, modality, std::vector<float>(dim * count, 0.0f)};
  }

  static EmbeddingSet from_rows(const std::vector<std::vector<float>>& rows,
                                std::size_t segments_per_clip = 0,
                                Modality modality = Modality::latent) {
    if (rows.empty()) throw InvalidArgument("from_rows: cannot infer dim from zero rows");
    const std::size_t dim = rows.front().size();
    std::vector<float> data;
    data.reserve(dim * rows.size());
    for (const auto& r : rows) {
      if (r.size() != dim) throw ShapeMismatch("from_rows: ragged rows");
      data.insert(data.end(), r.begin(), r.end());
    }
    return {dim, rows.size(), segments_per_clip, modality, std::move(data)};
  }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t count() const noexcept { return count_; }
  std::size_t segments_per_clip() const noexcept { return segments_; }
  Modality modality() const noexcept { return modality_; }
  bool segmented() const noexcept { return segments_ > 0; }

  /// Number of row groups: clips when segmented, rows otherwise.
  std::size_t unit_count() const noexcept { return segments_ ? count_ / segments_ : count_; }
  std::size_t rows_per_unit() const noexcept { return segments_ ? segments_ : 1; }

  std::span<const float> row(std::size_t i) const noexcept { return {data_.data() + i * dim_, dim_}; }
  std::span<float> row(std::size_t i) noexcept { return {data_.data() + i * dim_, dim_}; }

  std::span<const float> data() const noexcept { return data_; }
  std::span<float> data() noexcept { return data_; }

  void set_modality(Modality m) noexcept { modality_ = m; }

  /// Throws NonFiniteValue on the first NaN/Inf.
  void check_finite() const {
    for (std::size_t i = 0; i < data_.size(); ++i) {
      if (!std::isfinite(data_[i])) {
        throw NonFiniteValue("non-finite value at row " + std::to_string(i / dim_) + ", column " +
                             std::to_string(i % dim_));
      }
    }
  }

  friend bool operator==(const EmbeddingSet& a, const EmbeddingSet& b) noexcept {
    return a.dim_ == b.dim_ && a.count_ == b.count_ && a.segments_ == b.segments_ &&
           a.modality_ == b.modality_ && a.data_ == b.data_;
  }

  /// Bitwise payload equality (distinguishes -0/+0, compares NaN payloads).
  bool bit_identical(const EmbeddingSet& o) const noexcept {
    return dim_ == o.dim_ && count_ == o.count_ && segments_ == o.segments_ &&
           std::memcmp(data_.data(), o.data_.data(), data_.size() * sizeof(float)) == 0;
  }

 private:
  void validate() const {
    if (dim_ == 0) throw InvalidArgument("embedding dim must be positive");
    if (data_.size() != dim_ * count_) {
      throw ShapeMismatch("payload has " + std::to_string(data_.size()) + " values, expected " +
                          std::to_string(dim_ * count_));
    }
    if (segments_ > 0 && count_ % segments_ != 0) {
      throw ShapeMismatch("row count " + std::to_string(count_) +
                          " is not a multiple of segments_per_clip " + std::to_string(segments_));
    }
  }

  std::size_t dim_ = 1;
  std::size_t count_ = 0;
  std::size_t segments_ = 0;
  Modality modality_ = Modality::latent;
  std::vector<float> data_;
};

// ---------------------------------------------------------------------------
// T2AVEMB1 binary format
// ---------------------------------------------------------------------------

inline constexpr std::array<char, 8> kEmbMagic = {'T', '2', 'A', 'V', 'E', 'M', 'B', '1'};
inline constexpr std::uint32_t kEmbVersion = 1;
inline constexpr std::uint32_t kDtypeF32 = 0;
inline constexpr std::size_t kEmbHeaderBytes = 32;

namespace detail {

template <typename U>
unsigned char* put_le(unsigned char* p, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) *p++ = static_cast<unsigned char>(v >> (8 * i));
  return p;
}

template <typename U>
U get_le(const unsigned char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

}  // namespace detail

/// Serializes to an in-memory T2AVEMB1 image.
inline std::vector<unsigned char> encode_embeddings(const EmbeddingSet& set) {
  set.check_finite();
  std::vector<unsigned char> out(kEmbHeaderBytes + set.data().size() * 4);
  unsigned char* p = std::copy(kEmbMagic.begin(), kEmbMagic.end(), out.data());
  p = detail::put_le<std::uint32_t>(p, kEmbVersion);
  p = detail::put_le<std::uint32_t>(p, static_cast<std::uint32_t>(set.dim()));
  p = detail::put_le<std::uint64_t>(p, set.count());
  p = detail::put_le<std::uint32_t>(p, static_cast<std::uint32_t>(set.segments_per_clip()));
  p = detail::put_le<std::uint32_t>(p, kDtypeF32);
  for (float v : set.data()) p = detail::put_le<std::uint32_t>(p, std::bit_cast<std::uint32_t>(v));
  return out;
}

/// Parses a T2AVEMB1 image. `what` names the source in error messages.
inline EmbeddingSet decode_embeddings(std::span<const unsigned char> bytes,
                                      Modality modality = Modality::latent,
                                      const std::string& what = "<memory>") {
  if (bytes.size() < kEmbMagic.size() ||
      std::memcmp(bytes.data(), kEmbMagic.data(), kEmbMagic.size()) != 0) {
    throw BadMagic(what + ": not a T2AVEMB1 file (bad magic)");
  }
  if (bytes.size() < kEmbHeaderBytes) throw TruncatedPayload(what + ": truncated header");
  const unsigned char* p = bytes.data();
  const auto version = detail::get_le<std::uint32_t>(p + 8);
  if (version != kEmbVersion) {
    throw VersionMismatch(what + ": unsupported version " + std::to_string(version));
  }
  const auto dim = detail::get_le<std::uint32_t>(p + 12);
  const auto count = detail::get_le<std::uint64_t>(p + 16);
  const auto segments = detail::get_le<std::uint32_t>(p + 24);
  const auto dtype = detail::get_le<std::uint32_t>(p + 28);
  if (dtype != kDtypeF32) throw DataError(what + ": unsupported dtype " + std::to_string(dtype));
  if (dim == 0) throw DataError(what + ": dim must be positive");
  if (segments > 0 && count % segments != 0) {
    throw DataError(what + ": count " + std::to_string(count) +
                    " is not a multiple of segments_per_clip " + std::to_string(segments));
  }
  const std::size_t payload = bytes.size() - kEmbHeaderBytes;
  if (count > payload / 4 / dim || payload / 4 < count * dim) {
    throw TruncatedPayload(what + ": payload holds " + std::to_string(payload / 4) +
                           " values, header declares " + std::to_string(count) + " x " +
                           std::to_string(dim));
  }
  if (payload != count * dim * 4) {
    throw DataError(what + ": " + std::to_string(payload - count * dim * 4) +
                    " trailing bytes after payload");
  }
  std::vector<float> data(count * dim);
  const unsigned char* q = p + kEmbHeaderBytes;
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i] = std::bit_cast<float>(detail::get_le<std::uint32_t>(q + 4 * i));
  }
  EmbeddingSet set(dim, count, segments, modality, std::move(data));
  try {
    set.check_finite();
  } catch (const NonFiniteValue& e) {
    throw NonFiniteValue(what + ": " + e.what());
  }
  return set;
}

/// The format carries no modality tag; callers declare it.
inline EmbeddingSet read_embeddings(const std::filesystem::path& path,
                                    Modality modality = Modality::latent) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_embeddings(bytes, modality, path.string());
}

inline void write_embeddings(const EmbeddingSet& set, const std::filesystem::path& path) {
  const auto bytes = encode_embeddings(set);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Transformations
// ---------------------------------------------------------------------------

/// Copies rows in the given order. The result is unsegmented.
inline EmbeddingSet select_rows(const EmbeddingSet& set, std::span<const std::size_t> indices) {
  std::vector<float> data;
  data.reserve(indices.size() * set.dim());
  for (std::size_t idx : indices) {
    if (idx >= set.count()) {
      throw IndexOutOfRange("row index " + std::to_string(idx) + " out of range for " +
                            std::to_string(set.count()) + " rows");
    }
    const auto r = set.row(idx);
    data.insert(data.end(), r.begin(), r.end());
  }
  return {set.dim(), indices.size(), 0, set.modality(), std::move(data)};
}

/// Copies whole clips (T rows each) for segmented sets; same as select_rows
/// otherwise. Segment structure is preserved.
inline EmbeddingSet select_units(const EmbeddingSet& set, std::span<const std::size_t> units) {
  if (!set.segmented()) return select_rows(set, units);
  const std::size_t t = set.segments_per_clip();
  std::vector<float> data;
  data.reserve(units.size() * t * set.dim());
  for (std::size_t u : units) {
    if (u >= set.unit_count()) {
      throw IndexOutOfRange("clip index " + std::to_string(u) + " out of range for " +
                            std::to_string(set.unit_count()) + " clips");
    }
    const auto first = set.data().begin() + static_cast<std::ptrdiff_t>(u * t * set.dim());
    data.insert(data.end(), first, first + static_cast<std::ptrdiff_t>(t * set.dim()));
  }
  return {set.dim(), units.size() * t, t, set.modality(), std::move(data)};
}

/// Concatenates rows of sets with matching dim and segment structure.
inline EmbeddingSet concat(const EmbeddingSet& a, const EmbeddingSet& b) {
  if (a.dim() != b.dim() || a.segments_per_clip() != b.segments_per_clip()) {
    throw ShapeMismatch("concat: dim or segment structure differs");
  }
  std::vector<float> data(a.data().begin(), a.data().end());
  data.insert(data.end(), b.data().begin(), b.data().end());
  return {a.dim(), a.count() + b.count(), a.segments_per_clip(), a.modality(), std::move(data)};
}

struct ProjectionSpec {
  enum class Kind { matrix, pad_truncate };

  Kind kind = Kind::pad_truncate;
  /// D_in x D_out, applied to row vectors: y = x * matrix.
  std::optional<Matrix> matrix;
  /// Output width for pad_truncate.
  std::size_t target_dim = 0;

  static ProjectionSpec pad_truncate(std::size_t target) {
    return {Kind::pad_truncate, std::nullopt, target};
  }
  static ProjectionSpec linear(Matrix m) {
    const std::size_t out = m.cols();
    return {Kind::matrix, std::move(m), out};
  }

  std::size_t input_dim() const noexcept { return matrix ? matrix->rows() : 0; }
  std::size_t output_dim() const noexcept {
    return kind == Kind::matrix && matrix ? matrix->cols() : target_dim;
  }
};

inline EmbeddingSet project(const EmbeddingSet& set, const ProjectionSpec& spec) {
  const std::size_t d_in = set.dim();
  if (spec.kind == ProjectionSpec::Kind::matrix) {
    if (!spec.matrix) throw InvalidArgument("matrix projection without a matrix");
    const Matrix& m = *spec.matrix;
    if (m.rows() != d_in) {
      throw ShapeMismatch("projection expects input dim " + std::to_string(m.rows()) + ", set has " +
                          std::to_string(d_in));
    }
    const std::size_t d_out = m.cols();
    std::vector<float> data(set.count() * d_out);
    std::vector<double> acc(d_out);
    for (std::size_t r = 0; r < set.count(); ++r) {
      std::fill(acc.begin(), acc.end(), 0.0);
      const auto x = set.row(r);
      for (std::size_t k = 0; k < d_in; ++k) {
        const double xk = x[k];
        const auto mk = m.row(k);
        for (std::size_t j = 0; j < d_out; ++j) acc[j] += xk * mk[j];
      }
      for (std::size_t j = 0; j < d_out; ++j) data[r * d_out + j] = static_cast<float>(acc[j]);
    }
    EmbeddingSet out(d_out, set.count(), set.segments_per_clip(), set.modality(), std::move(data));
    out.check_finite();
    return out;
  }
  const std::size_t d_out = spec.target_dim;
  if (d_out == 0) throw InvalidArgument("pad_truncate target dim must be positive");
  std::vector<float> data(set.count() * d_out, 0.0f);
  const std::size_t keep = std::min(d_in, d_out);
  for (std::size_t r = 0; r < set.count(); ++r) {
    const auto x = set.row(r);
    std::copy_n(x.begin(), keep, data.begin() + static_cast<std::ptrdiff_t>(r * d_out));
  }
  return {d_out, set.count(), set.segments_per_clip(), set.modality(), std::move(data)};
}

enum class ShiftMode { cyclic, pad_zero };

/// Within each clip, segment i takes the content of segment i - k.
inline EmbeddingSet shift_segments(const EmbeddingSet& set, std::size_t k, ShiftMode mode) {
  if (!set.segmented()) throw InvalidArgument("shift_segments requires a segmented set");
  const std::size_t t = set.segments_per_clip();
  if (k >= t) {
    throw InvalidArgument("shift " + std::to_string(k) + " out of range for " + std::to_string(t) +
                          " segments");
  }
  const std::size_t d = set.dim();
  std::vector<float> data(set.data().size(), 0.0f);
  for (std::size_t c = 0; c < set.unit_count(); ++c) {
    for (std::size_t i = 0; i < t; ++i) {
      std::size_t src;
      if (i >= k) {
        src = i - k;
      } else if (mode == ShiftMode::cyclic) {
        src = i + t - k;
      } else {
        continue;
      }
      const auto from = set.row(c * t + src);
      std::copy(from.begin(), from.end(), data.begin() + static_cast<std::ptrdiff_t>((c * t + i) * d));
    }
  }
  return {d, set.count(), t, set.modality(), std::move(data)};
}

/// Elementwise mean of corresponding rows.
inline EmbeddingSet average_sets(const EmbeddingSet& a, const EmbeddingSet& b) {
  if (a.dim() != b.dim() || a.count() != b.count() ||
      a.segments_per_clip() != b.segments_per_clip()) {
    throw ShapeMismatch("average_sets: shapes differ (" + std::to_string(a.count()) + "x" +
                        std::to_string(a.dim()) + " vs " + std::to_string(b.count()) + "x" +
                        std::to_string(b.dim()) + ")");
  }
  std::vector<float> data(a.data().size());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i] = static_cast<float>(0.5 * (static_cast<double>(x[i]) + static_cast<double>(y[i])));
  }
  return {a.dim(), a.count(), a.segments_per_clip(), a.modality(), std::move(data)};
}

// ---------------------------------------------------------------------------
// Pair manifests (".pairs.json" sidecars)
// ---------------------------------------------------------------------------

enum class PairLabel { true_pair, false_pair };

NLOHMANN_JSON_SERIALIZE_ENUM(PairLabel, {{PairLabel::true_pair, "true_pair"},
                                         {PairLabel::false_pair, "false_pair"}})

/// Row indices address row groups: clips for segmented sets, rows otherwise.
struct Pair {
  std::string id;
  std::size_t audio_row = 0;
  std::size_t visual_row = 0;
  std::size_t text_row = 0;
  PairLabel label = PairLabel::true_pair;
  double shift_s = 0.0;
  std::string class_tag;

  friend bool operator==(const Pair&, const Pair&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(Pair, id, audio_row, visual_row, text_row, label, shift_s,
                                   class_tag)

struct PairManifest {
  int version = 1;
  std::vector<Pair> pairs;

  friend bool operator==(const PairManifest&, const PairManifest&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(PairManifest, version, pairs)

/// Checks id uniqueness, non-negative shifts and, for any set supplied, row bounds.
inline void validate_manifest(const PairManifest& m, const EmbeddingSet* audio = nullptr,
                              const EmbeddingSet* visual = nullptr,
                              const EmbeddingSet* text = nullptr) {
  std::unordered_set<std::string> seen;
  for (const auto& p : m.pairs) {
    if (!seen.insert(p.id).second) throw DataError("duplicate pair id '" + p.id + "'");
    if (!(p.shift_s >= 0.0) || !std::isfinite(p.shift_s)) {
      throw DataError("pair '" + p.id + "': shift_s must be finite and >= 0");
    }
    auto check = [&](const EmbeddingSet* s, std::size_t idx, const char* which) {
      if (s && idx >= s->unit_count()) {
        throw IndexOutOfRange("pair '" + p.id + "': " + which + " " + std::to_string(idx) +
                              " out of range for " + std::to_string(s->unit_count()));
      }
    };
    check(audio, p.audio_row, "audio_row");
    check(visual, p.visual_row, "visual_row");
    check(text, p.text_row, "text_row");
  }
}

inline PairManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  PairManifest m;
  try {
    m = nlohmann::json::parse(in).get<PairManifest>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": malformed manifest: " + e.what());
  }
  if (m.version != 1) throw VersionMismatch(path.string() + ": unsupported manifest version");
  validate_manifest(m);
  return m;
}

inline void write_manifest(const PairManifest& m, const std::filesystem::path& path) {
  validate_manifest(m);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << nlohmann::json(m).dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

/// "clips.emb" -> "clips.pairs.json".
inline std::filesystem::path manifest_path_for(const std::filesystem::path& emb_path) {
  auto p = emb_path;
  p.replace_extension(".pairs.json");
  return p;
}

}  // namespace t2av
