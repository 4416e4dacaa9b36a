#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "abm/adjoint.hpp"

namespace abm {

/// Reconstruction granularity, from one stride offset and in-channel (rm4) to a
/// whole class logit (rm0).
enum class Mode : std::uint8_t { rm0 = 0, rm1 = 1, rm2 = 2, rm3 = 3, rm4 = 4 };

const char* to_string(Mode mode);
Mode parse_mode(const std::string& text);

/// Indices of one surface. Unused fields are -1. `layer` is the conv index
/// (ConvN) for rm1..rm4 and -1 for rm0.
struct SurfaceIndex {
  int layer = -1;
  long s = -1;  // stride offset: row-major position in the conv output grid
  long j = -1;  // in-channel
  long i = -1;  // out-channel
  long k = -1;  // class

  bool operator==(const SurfaceIndex&) const = default;
};

/// Input-shaped tensor H whose inner product with the input reproduces one
/// (partial) pre-activation value.
template <typename T>
struct Hypersurface {
  Mode mode = Mode::rm0;
  SurfaceIndex index;
  double k_scale = 0.125;
  Tensor<T> values;
};

/// Unit at (s, i) of the conv output contributed by in-channel j only.
template <typename T>
Hypersurface<T> rm4(const Network<T>& net, const ActivationTrace<T>& trace, int layer, long j, long i, long s);

/// Sum of rm4 over every stride offset.
template <typename T>
Hypersurface<T> rm3(const Network<T>& net, const ActivationTrace<T>& trace, int layer, long j, long i);

/// Pre-activation unit at stride offset s of out-channel i.
template <typename T>
Hypersurface<T> rm2(const Network<T>& net, const ActivationTrace<T>& trace, int layer, long i, long s);

/// Sum of out-channel i over the whole output grid.
template <typename T>
Hypersurface<T> rm1(const Network<T>& net, const ActivationTrace<T>& trace, int layer, long i);

/// Logit of class k.
template <typename T>
Hypersurface<T> rm0(const Network<T>& net, const ActivationTrace<T>& trace, long k);

/// Extents of each index axis for a (mode, layer) pair, in emission order.
/// rm4: {s, j, i}; rm3: {j, i}; rm2: {s, i}; rm1: {i}; rm0: {k}.
struct IndexSpace {
  std::vector<char> axes;          // axis names in emission order ('s', 'j', 'i', 'k')
  std::vector<std::size_t> extents;

  [[nodiscard]] std::size_t size() const;
};

/// Throws UnsupportedError for the first conv layer or an rm0 request on a conv,
/// IndexError for layers that do not exist.
template <typename T>
IndexSpace index_space(const Network<T>& net, Mode mode, int layer);

struct ReconstructionRequest {
  Mode mode = Mode::rm0;
  int layer = -1;
  /// Per-axis filters; an empty filter keeps the whole range.
  std::vector<long> s, j, i, k;
  /// Ordinal (within the filtered sequence) of the first surface to emit.
  std::size_t start = 0;
  std::size_t workers = 1;
};

/// Filtered index tuples in emission order: s-major, then j, then i (k for rm0).
template <typename T>
std::vector<SurfaceIndex> enumerate(const Network<T>& net, const ReconstructionRequest& request);

/// Streams surfaces in deterministic order. The sink receives each surface with
/// its ordinal and returns false to stop early. Returns the number emitted.
template <typename T>
std::size_t batch_reconstruct(const Network<T>& net, const ActivationTrace<T>& trace,
                              const ReconstructionRequest& request,
                              const std::function<bool(std::size_t ordinal, const Hypersurface<T>&)>& sink);

/// One row of the surface-shape ledger.
struct LedgerRow {
  std::string layer;  // "Conv1", ..., "FC"
  Mode mode = Mode::rm0;
  bool applicable = false;
  std::vector<std::size_t> extents;  // index extents, empty when not applicable
  Shape surface_shape;
};

/// Surface counts and shapes for every (layer, mode) pair of a network.
template <typename T>
std::vector<LedgerRow> shape_ledger(const Network<T>& net);

/// Hypersurface archive layout (little-endian):
///   "ABMH" | u16 version | u8 mode | u8 dtype | i32 layer | f64 k | u32 H, W, C
///   | u64 count | count x (i64 s, j, i, k | values) | u64 count | count x u64 offset
///   | u32 CRC32 of all preceding bytes
inline constexpr std::uint16_t kSurfaceFormatVersion = 1;

template <typename T>
class SurfaceArchiveWriter {
 public:
  SurfaceArchiveWriter(const std::filesystem::path& path, Mode mode, int layer, double k_scale,
                       const Shape& input_shape, std::uint64_t count);
  void append(const Hypersurface<T>& surface);
  /// Writes the index table and CRC. Throws if fewer surfaces than declared were appended.
  void finish();

 private:
  void put(const void* data, std::size_t n);

  std::ofstream out_;
  std::filesystem::path path_;
  Shape input_shape_;
  std::uint64_t declared_ = 0;
  std::uint64_t written_ = 0;
  std::uint64_t offset_ = 0;
  std::uint32_t crc_ = 0;
  std::vector<std::uint64_t> offsets_;
};

template <typename T>
struct SurfaceArchive {
  Mode mode = Mode::rm0;
  int layer = -1;
  double k_scale = 0.125;
  Shape input_shape;
  std::vector<Hypersurface<T>> surfaces;
};

template <typename T>
SurfaceArchive<T> read_surface_archive(const std::filesystem::path& path);

}  // namespace abm
