#include "abm/model_io.hpp"

#include "binary_io.hpp"

namespace abm {
namespace {

constexpr std::array<char, 4> kMagic{'A', 'B', 'M', 'P'};
const char* const kWhat = "model file";

template <typename T>
void write_blob(detail::ByteWriter& w, int node, const Tensor<T>& t) {
  w.u32(static_cast<std::uint32_t>(node));
  w.u8(static_cast<std::uint8_t>(t.rank()));
  for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  for (T v : t.data()) w.value(v);
}

struct Header {
  ModelInfo info;
  std::uint32_t blobs = 0;
};

Header read_header(detail::ByteReader& r) {
  Header h;
  const std::uint8_t arch = r.u8();
  const std::uint8_t dtype = r.u8();
  if (arch < 1 || arch > 3) {
    throw FormatError(FormatError::Kind::invalid, "model file: unknown architecture id " + std::to_string(arch));
  }
  if (dtype != 1 && dtype != 2) {
    throw FormatError(FormatError::Kind::invalid, "model file: unknown dtype tag " + std::to_string(dtype));
  }
  h.info.architecture = static_cast<Architecture>(arch);
  h.info.dtype = static_cast<DType>(dtype);
  const std::uint32_t H = r.u32(), W = r.u32(), C = r.u32();
  h.info.input_shape = {H, W, C};
  h.info.classes = r.u32();
  h.blobs = r.u32();
  return h;
}

template <typename Stored, typename T>
Tensor<T> read_blob_data(detail::ByteReader& r, const Shape& shape) {
  const std::size_t n = element_count(shape);
  r.need(static_cast<std::uint64_t>(n) * sizeof(Stored));
  std::vector<T> data(n);
  for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<T>(r.template value<Stored>());
  return Tensor<T>(shape, std::move(data));
}

template <typename T>
Network<T> skeleton(const ModelInfo& info) {
  switch (info.architecture) {
    case Architecture::tiny:
      return build_tiny<T>(info.input_shape, info.classes, 0);
    case Architecture::vgg7:
    case Architecture::fixup_resnet20: {
      Network<T> net = build<T>(info.architecture, 0, WeightInit::he_normal);
      if (net.input_shape() != info.input_shape || net.classes() != info.classes) {
        throw FormatError(FormatError::Kind::invalid,
                          std::string("model file: ") + to_string(info.architecture) +
                              " header declares input " + to_string(info.input_shape) + " / " +
                              std::to_string(info.classes) + " classes");
      }
      return net;
    }
    case Architecture::custom:
      break;
  }
  throw FormatError(FormatError::Kind::invalid, "model file: custom architectures cannot be loaded");
}

}  // namespace

template <typename T>
std::vector<std::uint8_t> encode_model(const Network<T>& net) {
  if (net.architecture() == Architecture::custom) {
    throw UnsupportedError("only vgg7, fixup_resnet20 and tiny networks can be saved");
  }
  detail::ByteWriter w;
  w.raw(kMagic.data(), 4);
  w.u16(kModelFormatVersion);
  w.u8(static_cast<std::uint8_t>(net.architecture()));
  w.u8(static_cast<std::uint8_t>(dtype_of<T>()));
  for (std::size_t d : net.input_shape()) w.u32(static_cast<std::uint32_t>(d));
  w.u32(static_cast<std::uint32_t>(net.classes()));
  std::uint32_t blobs = 0;
  for (const auto& l : net.layers()) {
    const LayerKind k = l.kind();
    blobs += (k == LayerKind::conv || k == LayerKind::fc || k == LayerKind::scalar_rescale) ? 1 : 0;
  }
  w.u32(blobs);
  for (int n = 0; n < static_cast<int>(net.node_count()); ++n) {
    const auto& op = net.layer(n).op;
    if (const auto* c = std::get_if<Conv<T>>(&op)) write_blob(w, n, c->kernel);
    if (const auto* d = std::get_if<Dense<T>>(&op)) write_blob(w, n, d->weight);
    if (const auto* s = std::get_if<ScalarRescale<T>>(&op)) {
      write_blob(w, n, Tensor<T>(Shape{1}, std::vector<T>{s->scale}));
    }
  }
  w.seal();
  return std::move(w.bytes());
}

template <typename T>
void save_model(const Network<T>& net, const std::filesystem::path& path) {
  detail::write_file(path, encode_model(net));
}

ModelInfo read_model_info(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  auto reader = detail::open_archive(bytes, kMagic, kModelFormatVersion, kWhat);
  return read_header(reader).info;
}

template <typename T>
Network<T> decode_model(const std::vector<std::uint8_t>& bytes) {
  auto r = detail::open_archive(bytes, kMagic, kModelFormatVersion, kWhat);
  const Header h = read_header(r);
  Network<T> net = skeleton<T>(h.info);
  std::size_t expected = 0;
  for (const auto& l : net.layers()) {
    const LayerKind k = l.kind();
    expected += (k == LayerKind::conv || k == LayerKind::fc || k == LayerKind::scalar_rescale) ? 1 : 0;
  }
  if (h.blobs != expected) {
    throw FormatError(FormatError::Kind::invalid, "model file: " + std::to_string(h.blobs) +
                                                      " weight blobs, architecture needs " +
                                                      std::to_string(expected));
  }
  std::vector<bool> seen(net.node_count(), false);
  for (std::uint32_t b = 0; b < h.blobs; ++b) {
    const std::uint32_t node = r.u32();
    const std::uint8_t rank = r.u8();
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    if (node >= net.node_count() || seen[node]) {
      throw FormatError(FormatError::Kind::invalid, "model file: blob for invalid node " + std::to_string(node));
    }
    seen[node] = true;
    Tensor<T> t = h.info.dtype == DType::binary32 ? read_blob_data<float, T>(r, shape)
                                                  : read_blob_data<double, T>(r, shape);
    auto& op = net.layers()[node].op;
    const std::string& name = net.layers()[node].name;
    auto check = [&](const Shape& want) {
      if (want != shape) {
        throw FormatError(FormatError::Kind::invalid, "model file: " + name + " blob shape " +
                                                          to_string(shape) + ", expected " + to_string(want));
      }
    };
    if (auto* c = std::get_if<Conv<T>>(&op)) {
      check(c->kernel.shape());
      c->kernel = std::move(t);
    } else if (auto* d = std::get_if<Dense<T>>(&op)) {
      check(d->weight.shape());
      d->weight = std::move(t);
    } else if (auto* s = std::get_if<ScalarRescale<T>>(&op)) {
      check(Shape{1});
      s->scale = t[0];
    } else {
      throw FormatError(FormatError::Kind::invalid, "model file: " + name + " has no parameters");
    }
  }
  detail::verify_crc(bytes, r, kWhat);
  return net;
}

template <typename T>
Network<T> load_model(const std::filesystem::path& path) {
  return decode_model<T>(detail::read_file(path));
}

template std::vector<std::uint8_t> encode_model(const Network<float>&);
template std::vector<std::uint8_t> encode_model(const Network<double>&);
template void save_model(const Network<float>&, const std::filesystem::path&);
template void save_model(const Network<double>&, const std::filesystem::path&);
template Network<float> decode_model<float>(const std::vector<std::uint8_t>&);
template Network<double> decode_model<double>(const std::vector<std::uint8_t>&);
template Network<float> load_model<float>(const std::filesystem::path&);
template Network<double> load_model<double>(const std::filesystem::path&);

}  // namespace abm
