#include "abm/backmap.hpp"

#include <algorithm>
#include <array>
#include <cstring>

#include "binary_io.hpp"
#include "graph.hpp"
#include "parallel.hpp"

namespace abm {

namespace {

constexpr std::array<char, 4> kSurfaceMagic{'A', 'B', 'M', 'H'};

template <typename T>
const Conv<T>& conv_at(const Network<T>& net, int layer) {
  if (layer < 0 || static_cast<std::size_t>(layer) >= net.conv_count()) {
    throw IndexError("conv layer " + std::to_string(layer) + " out of range (network has " +
                     std::to_string(net.conv_count()) + ")");
  }
  if (layer == 0) {
    throw UnsupportedError("Conv0 reads the image directly; reconstruction starts at Conv1");
  }
  return std::get<Conv<T>>(net.layer(net.conv_node(static_cast<std::size_t>(layer))).op);
}

void check_index(long value, std::size_t extent, const char* axis) {
  if (value < 0 || static_cast<std::size_t>(value) >= extent) {
    throw IndexError(std::string(axis) + " = " + std::to_string(value) + " out of range [0, " +
                     std::to_string(extent) + ")");
  }
}

template <typename T>
Hypersurface<T> make_surface(const ActivationTrace<T>& trace, Mode mode, SurfaceIndex index, Tensor<T> values) {
  Hypersurface<T> h;
  h.mode = mode;
  h.index = index;
  h.k_scale = trace.k;
  h.values = std::move(values);
  return h;
}

// Adjoint of one conv input node; the conv input is the image itself only for Conv0.
template <typename T>
Tensor<T> pull_back(const Network<T>& net, const ActivationTrace<T>& trace, int node, Tensor<T> cotangent) {
  if (node == kInputNode) return cotangent;
  return vjp(trace, net, Cotangent<T>{node, std::move(cotangent)});
}

// Adds kernel[:, :, j, i] onto channel j of `cot` (shaped like the conv input)
// at the receptive field of output position s.
template <typename T>
void scatter_kernel_slice(Tensor<T>& cot, const Conv<T>& conv, const detail::Grid& in, const detail::Grid& out,
                          long j, long i, std::size_t s) {
  const std::size_t kh = conv.kernel.dim(0), kw = conv.kernel.dim(1);
  const std::size_t cin = conv.kernel.dim(2), cout = conv.kernel.dim(3);
  const auto pad_y = same_padding(in.h, kh, conv.stride);
  const auto pad_x = same_padding(in.w, kw, conv.stride);
  const auto oy = static_cast<std::ptrdiff_t>(s / out.w), ox = static_cast<std::ptrdiff_t>(s % out.w);
  for (std::size_t dy = 0; dy < kh; ++dy) {
    const std::ptrdiff_t y = oy * static_cast<std::ptrdiff_t>(conv.stride) - static_cast<std::ptrdiff_t>(pad_y.before) +
                             static_cast<std::ptrdiff_t>(dy);
    if (y < 0 || y >= static_cast<std::ptrdiff_t>(in.h)) continue;
    for (std::size_t dx = 0; dx < kw; ++dx) {
      const std::ptrdiff_t x = ox * static_cast<std::ptrdiff_t>(conv.stride) -
                               static_cast<std::ptrdiff_t>(pad_x.before) + static_cast<std::ptrdiff_t>(dx);
      if (x < 0 || x >= static_cast<std::ptrdiff_t>(in.w)) continue;
      const T w = conv.kernel[((dy * kw + dx) * cin + static_cast<std::size_t>(j)) * cout + static_cast<std::size_t>(i)];
      cot[(static_cast<std::size_t>(y) * in.w + static_cast<std::size_t>(x)) * in.c + static_cast<std::size_t>(j)] += w;
    }
  }
}

std::vector<long> axis_values(const std::vector<long>& filter, std::size_t extent, char axis) {
  if (filter.empty()) {
    std::vector<long> all(extent);
    for (std::size_t v = 0; v < extent; ++v) all[v] = static_cast<long>(v);
    return all;
  }
  const char name[2] = {axis, '\0'};
  for (long v : filter) check_index(v, extent, name);
  return filter;
}

}  // namespace

const char* to_string(Mode mode) {
  switch (mode) {
    case Mode::rm0: return "rm0";
    case Mode::rm1: return "rm1";
    case Mode::rm2: return "rm2";
    case Mode::rm3: return "rm3";
    case Mode::rm4: return "rm4";
  }
  return "?";
}

Mode parse_mode(const std::string& text) {
  std::string t = text;
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  for (Mode m : {Mode::rm0, Mode::rm1, Mode::rm2, Mode::rm3, Mode::rm4}) {
    if (t == to_string(m)) return m;
  }
  throw Error("unknown reconstruction mode '" + text + "' (expected rm0..rm4)");
}

template <typename T>
Hypersurface<T> rm4(const Network<T>& net, const ActivationTrace<T>& trace, int layer, long j, long i, long s) {
  const Conv<T>& conv = conv_at(net, layer);
  const int node = net.conv_node(static_cast<std::size_t>(layer));
  const int input = net.layer(node).input;
  const auto in = detail::node_grid(net, input);
  const auto out = detail::node_grid(net, node);
  check_index(j, in.c, "j");
  check_index(i, out.c, "i");
  check_index(s, out.h * out.w, "s");
  Tensor<T> cot(net.shape_of(input));
  scatter_kernel_slice(cot, conv, in, out, j, i, static_cast<std::size_t>(s));
  return make_surface(trace, Mode::rm4, {layer, s, j, i, -1}, pull_back(net, trace, input, std::move(cot)));
}

template <typename T>
Hypersurface<T> rm3(const Network<T>& net, const ActivationTrace<T>& trace, int layer, long j, long i) {
  const Conv<T>& conv = conv_at(net, layer);
  const int node = net.conv_node(static_cast<std::size_t>(layer));
  const int input = net.layer(node).input;
  const auto in = detail::node_grid(net, input);
  const auto out = detail::node_grid(net, node);
  check_index(j, in.c, "j");
  check_index(i, out.c, "i");
  Tensor<T> cot(net.shape_of(input));
  for (std::size_t s = 0; s < out.h * out.w; ++s) scatter_kernel_slice(cot, conv, in, out, j, i, s);
  return make_surface(trace, Mode::rm3, {layer, -1, j, i, -1}, pull_back(net, trace, input, std::move(cot)));
}

template <typename T>
Hypersurface<T> rm2(const Network<T>& net, const ActivationTrace<T>& trace, int layer, long i, long s) {
  (void)conv_at(net, layer);
  const int node = net.conv_node(static_cast<std::size_t>(layer));
  const auto out = detail::node_grid(net, node);
  check_index(i, out.c, "i");
  check_index(s, out.h * out.w, "s");
  Tensor<T> cot(net.shape_of(node));
  cot[static_cast<std::size_t>(s) * out.c + static_cast<std::size_t>(i)] = T(1);
  return make_surface(trace, Mode::rm2, {layer, s, -1, i, -1}, vjp(trace, net, Cotangent<T>{node, std::move(cot)}));
}

template <typename T>
Hypersurface<T> rm1(const Network<T>& net, const ActivationTrace<T>& trace, int layer, long i) {
  (void)conv_at(net, layer);
  const int node = net.conv_node(static_cast<std::size_t>(layer));
  const auto out = detail::node_grid(net, node);
  check_index(i, out.c, "i");
  Tensor<T> cot(net.shape_of(node));
  for (std::size_t s = 0; s < out.h * out.w; ++s) cot[s * out.c + static_cast<std::size_t>(i)] = T(1);
  return make_surface(trace, Mode::rm1, {layer, -1, -1, i, -1}, vjp(trace, net, Cotangent<T>{node, std::move(cot)}));
}

template <typename T>
Hypersurface<T> rm0(const Network<T>& net, const ActivationTrace<T>& trace, long k) {
  const int node = net.logits_node();
  check_index(k, net.classes(), "k");
  Tensor<T> cot(net.shape_of(node));
  cot[static_cast<std::size_t>(k)] = T(1);
  return make_surface(trace, Mode::rm0, {-1, -1, -1, -1, k}, vjp(trace, net, Cotangent<T>{node, std::move(cot)}));
}

std::size_t IndexSpace::size() const {
  std::size_t n = 1;
  for (std::size_t e : extents) n *= e;
  return n;
}

template <typename T>
IndexSpace index_space(const Network<T>& net, Mode mode, int layer) {
  if (mode == Mode::rm0) {
    if (layer != -1) throw UnsupportedError("rm0 targets the classifier only; pass no conv layer");
    return {{'k'}, {net.classes()}};
  }
  if (layer == -1) throw UnsupportedError(std::string(to_string(mode)) + " needs a conv layer");
  const Conv<T>& conv = conv_at(net, layer);
  const auto out = detail::node_grid(net, net.conv_node(static_cast<std::size_t>(layer)));
  const std::size_t S = out.h * out.w, J = conv.kernel.dim(2), I = conv.kernel.dim(3);
  switch (mode) {
    case Mode::rm4: return {{'s', 'j', 'i'}, {S, J, I}};
    case Mode::rm3: return {{'j', 'i'}, {J, I}};
    case Mode::rm2: return {{'s', 'i'}, {S, I}};
    case Mode::rm1: return {{'i'}, {I}};
    case Mode::rm0: break;
  }
  return {};
}

template <typename T>
std::vector<SurfaceIndex> enumerate(const Network<T>& net, const ReconstructionRequest& request) {
  const IndexSpace space = index_space(net, request.mode, request.layer);
  std::vector<std::vector<long>> values;
  for (std::size_t a = 0; a < space.axes.size(); ++a) {
    const char axis = space.axes[a];
    const std::vector<long>& filter = axis == 's' ? request.s : axis == 'j' ? request.j : axis == 'i' ? request.i : request.k;
    values.push_back(axis_values(filter, space.extents[a], axis));
  }
  std::vector<SurfaceIndex> out;
  std::vector<std::size_t> pos(values.size(), 0);
  for (const auto& v : values) {
    if (v.empty()) return out;
  }
  while (true) {
    SurfaceIndex idx;
    idx.layer = request.layer;
    for (std::size_t a = 0; a < values.size(); ++a) {
      const long v = values[a][pos[a]];
      switch (space.axes[a]) {
        case 's': idx.s = v; break;
        case 'j': idx.j = v; break;
        case 'i': idx.i = v; break;
        default: idx.k = v; break;
      }
    }
    out.push_back(idx);
    std::size_t a = values.size();
    while (a > 0) {
      --a;
      if (++pos[a] < values[a].size()) break;
      pos[a] = 0;
      if (a == 0) return out;
    }
  }
}

template <typename T>
std::size_t batch_reconstruct(const Network<T>& net, const ActivationTrace<T>& trace,
                              const ReconstructionRequest& request,
                              const std::function<bool(std::size_t, const Hypersurface<T>&)>& sink) {
  const auto indices = enumerate(net, request);
  auto build = [&](const SurfaceIndex& idx) -> Hypersurface<T> {
    try {
      switch (request.mode) {
        case Mode::rm4: return rm4(net, trace, idx.layer, idx.j, idx.i, idx.s);
        case Mode::rm3: return rm3(net, trace, idx.layer, idx.j, idx.i);
        case Mode::rm2: return rm2(net, trace, idx.layer, idx.i, idx.s);
        case Mode::rm1: return rm1(net, trace, idx.layer, idx.i);
        case Mode::rm0: return rm0(net, trace, idx.k);
      }
    } catch (const Error& e) {
      throw Error(std::string(to_string(request.mode)) + " surface (layer " + std::to_string(idx.layer) +
                  ", s " + std::to_string(idx.s) + ", j " + std::to_string(idx.j) + ", i " + std::to_string(idx.i) +
                  ", k " + std::to_string(idx.k) + "): " + e.what());
    }
    return {};
  };
  const std::size_t workers = std::max<std::size_t>(1, request.workers);
  const std::size_t chunk = workers * 8;
  std::size_t emitted = 0;
  for (std::size_t first = request.start; first < indices.size(); first += chunk) {
    const std::size_t count = std::min(chunk, indices.size() - first);
    std::vector<Hypersurface<T>> batch(count);
    detail::parallel_for(count, workers, [&](std::size_t t) { batch[t] = build(indices[first + t]); });
    for (std::size_t t = 0; t < count; ++t) {
      ++emitted;
      if (!sink(first + t, batch[t])) return emitted;
    }
  }
  return emitted;
}

template <typename T>
std::vector<LedgerRow> shape_ledger(const Network<T>& net) {
  std::vector<LedgerRow> rows;
  auto add_row = [&](const std::string& name, Mode mode, int layer) {
    LedgerRow row;
    row.layer = name;
    row.mode = mode;
    try {
      const IndexSpace space = index_space(net, mode, layer);
      row.applicable = true;
      row.surface_shape = net.input_shape();
      for (std::size_t a = 0; a < space.axes.size(); ++a) {
        if (space.axes[a] == 's') {
          const auto out = detail::node_grid(net, net.conv_node(static_cast<std::size_t>(layer)));
          row.extents.push_back(out.h);
          row.extents.push_back(out.w);
        } else {
          row.extents.push_back(space.extents[a]);
        }
      }
    } catch (const UnsupportedError&) {
      row.applicable = false;
    }
    rows.push_back(std::move(row));
  };
  for (std::size_t c = 0; c < net.conv_count(); ++c) {
    for (Mode m : {Mode::rm4, Mode::rm3, Mode::rm2, Mode::rm1, Mode::rm0}) {
      add_row("Conv" + std::to_string(c), m, m == Mode::rm0 ? -2 : static_cast<int>(c));
    }
  }
  for (Mode m : {Mode::rm4, Mode::rm3, Mode::rm2, Mode::rm1, Mode::rm0}) {
    add_row("FC", m, -1);
  }
  return rows;
}

template <typename T>
SurfaceArchiveWriter<T>::SurfaceArchiveWriter(const std::filesystem::path& path, Mode mode, int layer,
                                              double k_scale, const Shape& input_shape, std::uint64_t count)
    : path_(path), input_shape_(input_shape), declared_(count) {
  if (input_shape.size() != 3) throw ShapeError("surface archives hold H x W x C surfaces");
  out_.open(path, std::ios::binary | std::ios::trunc);
  if (!out_) throw FormatError(FormatError::Kind::io, "cannot open " + path.string() + " for writing");
  detail::ByteWriter w;
  w.raw(kSurfaceMagic.data(), 4);
  w.u16(kSurfaceFormatVersion);
  w.u8(static_cast<std::uint8_t>(mode));
  w.u8(static_cast<std::uint8_t>(dtype_of<T>()));
  w.u32(static_cast<std::uint32_t>(layer));
  w.f64(k_scale);
  for (std::size_t d : input_shape) w.u32(static_cast<std::uint32_t>(d));
  w.u64(count);
  put(w.bytes().data(), w.size());
  offsets_.reserve(count);
}

template <typename T>
void SurfaceArchiveWriter<T>::put(const void* data, std::size_t n) {
  out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out_) throw FormatError(FormatError::Kind::io, "write failed on " + path_.string());
  crc_ = detail::crc32_update(crc_, static_cast<const std::uint8_t*>(data), n);
  offset_ += n;
}

template <typename T>
void SurfaceArchiveWriter<T>::append(const Hypersurface<T>& surface) {
  if (written_ == declared_) throw Error("surface archive already holds the declared " + std::to_string(declared_) + " surfaces");
  require_same_shape(surface.values.shape(), input_shape_, "archived surface");
  offsets_.push_back(offset_);
  detail::ByteWriter w;
  for (long v : {surface.index.s, surface.index.j, surface.index.i, surface.index.k}) {
    w.u64(static_cast<std::uint64_t>(static_cast<std::int64_t>(v)));
  }
  for (T v : surface.values.data()) w.value<T>(v);
  put(w.bytes().data(), w.size());
  ++written_;
}

template <typename T>
void SurfaceArchiveWriter<T>::finish() {
  if (written_ != declared_) {
    throw Error("surface archive declared " + std::to_string(declared_) + " surfaces but received " +
                std::to_string(written_));
  }
  detail::ByteWriter w;
  w.u64(written_);
  for (std::uint64_t o : offsets_) w.u64(o);
  put(w.bytes().data(), w.size());
  detail::ByteWriter tail;
  tail.u32(crc_);
  out_.write(reinterpret_cast<const char*>(tail.bytes().data()), 4);
  out_.close();
  if (!out_) throw FormatError(FormatError::Kind::io, "write failed on " + path_.string());
}

template <typename T>
SurfaceArchive<T> read_surface_archive(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  const std::string what = "surface archive " + path.string();
  auto r = detail::open_archive(bytes, kSurfaceMagic, kSurfaceFormatVersion, what);
  SurfaceArchive<T> a;
  const std::uint8_t mode = r.u8();
  if (mode > static_cast<std::uint8_t>(Mode::rm4)) {
    throw FormatError(FormatError::Kind::invalid, what + ": unknown mode " + std::to_string(mode));
  }
  a.mode = static_cast<Mode>(mode);
  const auto stored = static_cast<DType>(r.u8());
  if (stored != DType::binary32 && stored != DType::binary64) {
    throw FormatError(FormatError::Kind::invalid, what + ": unknown dtype");
  }
  a.layer = static_cast<int>(static_cast<std::int32_t>(r.u32()));
  a.k_scale = r.f64();
  a.input_shape = {r.u32(), r.u32(), r.u32()};
  const std::uint64_t count = r.u64();
  const std::size_t n = element_count(a.input_shape);
  const std::size_t width = stored == DType::binary32 ? 4 : 8;
  r.need(count * (32 + n * width));
  a.surfaces.reserve(count);
  for (std::uint64_t c = 0; c < count; ++c) {
    Hypersurface<T> h;
    h.mode = a.mode;
    h.k_scale = a.k_scale;
    h.index.layer = a.layer;
    h.index.s = static_cast<long>(static_cast<std::int64_t>(r.u64()));
    h.index.j = static_cast<long>(static_cast<std::int64_t>(r.u64()));
    h.index.i = static_cast<long>(static_cast<std::int64_t>(r.u64()));
    h.index.k = static_cast<long>(static_cast<std::int64_t>(r.u64()));
    h.values = Tensor<T>(a.input_shape);
    for (std::size_t e = 0; e < n; ++e) {
      h.values[e] = stored == DType::binary32 ? static_cast<T>(r.f32()) : static_cast<T>(r.f64());
    }
    a.surfaces.push_back(std::move(h));
  }
  if (r.u64() != count) throw FormatError(FormatError::Kind::invalid, what + ": index table count mismatch");
  r.need(count * 8);
  for (std::uint64_t c = 0; c < count; ++c) (void)r.u64();
  detail::verify_crc(bytes, r, what);
  return a;
}

#define ABM_INSTANTIATE_BACKMAP(T)                                                                          \
  template Hypersurface<T> rm4(const Network<T>&, const ActivationTrace<T>&, int, long, long, long);      \
  template Hypersurface<T> rm3(const Network<T>&, const ActivationTrace<T>&, int, long, long);            \
  template Hypersurface<T> rm2(const Network<T>&, const ActivationTrace<T>&, int, long, long);            \
  template Hypersurface<T> rm1(const Network<T>&, const ActivationTrace<T>&, int, long);                  \
  template Hypersurface<T> rm0(const Network<T>&, const ActivationTrace<T>&, long);                       \
  template IndexSpace index_space(const Network<T>&, Mode, int);                                          \
  template std::vector<SurfaceIndex> enumerate(const Network<T>&, const ReconstructionRequest&);          \
  template std::size_t batch_reconstruct(const Network<T>&, const ActivationTrace<T>&,                    \
                                         const ReconstructionRequest&,                                    \
                                         const std::function<bool(std::size_t, const Hypersurface<T>&)>&); \
  template std::vector<LedgerRow> shape_ledger(const Network<T>&);                                        \
  template class SurfaceArchiveWriter<T>;                                                                 \
  template SurfaceArchive<T> read_surface_archive(const std::filesystem::path&);

ABM_INSTANTIATE_BACKMAP(float)
ABM_INSTANTIATE_BACKMAP(double)

}  // namespace abm
