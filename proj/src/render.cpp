#include "abm/render.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <map>

#include "abm/verify.hpp"
#include "binary_io.hpp"

namespace abm {

namespace {

constexpr std::array<std::uint8_t, 8> kPngSignature = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
constexpr std::size_t kStoredBlock = 65535;

FormatError bad_image(const std::string& what) { return FormatError(FormatError::Kind::invalid, what); }

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

std::uint32_t get_be32(const std::uint8_t* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

void put_chunk(std::vector<std::uint8_t>& out, const char type[4], const std::vector<std::uint8_t>& data) {
  put_be32(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  put_be32(out, detail::crc32_of(out.data() + start, out.size() - start));
}

// zlib stream of stored (uncompressed) deflate blocks: the bytes depend only on the input.
std::vector<std::uint8_t> zlib_stored(const std::vector<std::uint8_t>& raw) {
  std::vector<std::uint8_t> z = {0x78, 0x01};
  std::size_t pos = 0;
  do {
    const std::size_t n = std::min(kStoredBlock, raw.size() - pos);
    const bool last = pos + n == raw.size();
    z.push_back(last ? 1 : 0);
    z.push_back(static_cast<std::uint8_t>(n & 0xff));
    z.push_back(static_cast<std::uint8_t>(n >> 8));
    z.push_back(static_cast<std::uint8_t>(~n & 0xff));
    z.push_back(static_cast<std::uint8_t>((~n >> 8) & 0xff));
    z.insert(z.end(), raw.begin() + static_cast<std::ptrdiff_t>(pos), raw.begin() + static_cast<std::ptrdiff_t>(pos + n));
    pos += n;
  } while (pos < raw.size());
  uLong adler = adler32(0L, Z_NULL, 0);
  adler = adler32(adler, raw.data(), static_cast<uInt>(raw.size()));
  put_be32(z, static_cast<std::uint32_t>(adler));
  return z;
}

std::vector<std::uint8_t> inflate_all(const std::vector<std::uint8_t>& z, std::size_t expected) {
  std::vector<std::uint8_t> out(expected);
  uLongf size = static_cast<uLongf>(expected);
  const int rc = uncompress(out.data(), &size, z.data(), static_cast<uLong>(z.size()));
  if (rc != Z_OK || size != expected) throw bad_image("PNG image data does not inflate to the declared size");
  return out;
}

std::uint8_t paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return static_cast<std::uint8_t>(a);
  return static_cast<std::uint8_t>(pb <= pc ? b : c);
}

Image blank(std::size_t width, std::size_t height, std::uint8_t value) {
  Image im;
  im.width = width;
  im.height = height;
  im.rgb.assign(width * height * 3, value);
  return im;
}

template <typename T>
Image render_surface(const Hypersurface<T>& h) {
  return to_image(normalize_abs(h.values));
}

template <typename T>
void require_surfaces(const std::vector<Hypersurface<T>>& surfaces, const char* what) {
  if (surfaces.empty()) throw Error(std::string(what) + ": no surfaces");
  for (const auto& h : surfaces) require_same_shape(h.values.shape(), surfaces.front().values.shape(), what);
}

std::string index_text(long v) { return v >= 0 ? "_" + std::to_string(v) : std::string(); }

}  // namespace

template <typename T>
Tensor<double> normalize_abs(const Tensor<T>& surface) {
  double peak = 0.0;
  for (T v : surface.data()) peak = std::max(peak, std::abs(static_cast<double>(v)));
  const double denom = std::max(peak, kZeroSubstitute);
  Tensor<double> out(surface.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(static_cast<double>(surface[i])) / denom;
  return out;
}

std::uint8_t quantize(double v) {
  const double scaled = std::clamp(v, 0.0, 1.0) * 255.0;
  return static_cast<std::uint8_t>(std::floor(scaled + 0.5));
}

Image to_image(const Tensor<double>& unit_values) {
  if (unit_values.rank() != 3 || (unit_values.dim(2) != 1 && unit_values.dim(2) != 3)) {
    throw ShapeError("images are rendered from (H, W, 1) or (H, W, 3) tensors, got " + to_string(unit_values.shape()));
  }
  const std::size_t h = unit_values.dim(0), w = unit_values.dim(1), c = unit_values.dim(2);
  Image im = blank(w, h, 0);
  for (std::size_t p = 0; p < h * w; ++p) {
    for (std::size_t ch = 0; ch < 3; ++ch) im.rgb[p * 3 + ch] = quantize(unit_values[p * c + (c == 3 ? ch : 0)]);
  }
  return im;
}

Image compose_grid(const std::vector<Image>& tiles, std::size_t rows, std::size_t cols, GridStyle style) {
  if (tiles.size() != rows * cols || tiles.empty()) {
    throw ShapeError("grid of " + std::to_string(rows) + " x " + std::to_string(cols) + " needs that many tiles, got " +
                     std::to_string(tiles.size()));
  }
  const std::size_t tw = tiles.front().width, th = tiles.front().height, sep = style.separator;
  for (const auto& t : tiles) {
    if (t.width != tw || t.height != th) throw ShapeError("grid tiles differ in size");
  }
  Image im = blank(cols * tw + (cols - 1) * sep, rows * th + (rows - 1) * sep, style.separator_value);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const Image& t = tiles[r * cols + c];
      const std::size_t y0 = r * (th + sep), x0 = c * (tw + sep);
      for (std::size_t y = 0; y < th; ++y) {
        std::copy_n(t.rgb.data() + y * tw * 3, tw * 3, im.rgb.data() + ((y0 + y) * im.width + x0) * 3);
      }
    }
  }
  return im;
}

template <typename T>
Image tile_strides(const std::vector<Hypersurface<T>>& surfaces, std::size_t grid_width, GridStyle style) {
  require_surfaces(surfaces, "tile_strides");
  const std::size_t n = surfaces.size();
  if (grid_width == 0 || n % grid_width != 0) {
    throw ShapeError("tile_strides: " + std::to_string(n) + " stride offsets do not fill rows of " + std::to_string(grid_width));
  }
  std::vector<const Hypersurface<T>*> by_s(n, nullptr);
  for (const auto& h : surfaces) {
    if (h.index.s < 0 || static_cast<std::size_t>(h.index.s) >= n || by_s[static_cast<std::size_t>(h.index.s)]) {
      throw IndexError("tile_strides: stride offsets must cover 0.." + std::to_string(n - 1) + " exactly once");
    }
    by_s[static_cast<std::size_t>(h.index.s)] = &h;
  }
  std::vector<Image> tiles;
  tiles.reserve(n);
  for (const auto* h : by_s) tiles.push_back(render_surface(*h));
  return compose_grid(tiles, n / grid_width, grid_width, style);
}

template <typename T>
Image tile_channels(const std::vector<Hypersurface<T>>& surfaces, GridStyle style) {
  require_surfaces(surfaces, "tile_channels");
  long max_j = -1, max_i = -1;
  for (const auto& h : surfaces) {
    max_j = std::max(max_j, h.index.j);
    max_i = std::max(max_i, h.index.i);
  }
  const auto rows = static_cast<std::size_t>(max_j + 1), cols = static_cast<std::size_t>(max_i + 1);
  std::vector<const Hypersurface<T>*> cell(rows * cols, nullptr);
  for (const auto& h : surfaces) {
    if (h.index.j < 0 || h.index.i < 0) throw IndexError("tile_channels: surface without (j, i) index");
    auto& slot = cell[static_cast<std::size_t>(h.index.j) * cols + static_cast<std::size_t>(h.index.i)];
    if (slot) throw IndexError("tile_channels: duplicate (j, i) = (" + std::to_string(h.index.j) + ", " + std::to_string(h.index.i) + ")");
    slot = &h;
  }
  std::vector<Image> tiles;
  for (std::size_t c = 0; c < cell.size(); ++c) {
    if (!cell[c]) {
      throw IndexError("tile_channels: missing (j, i) = (" + std::to_string(c / cols) + ", " + std::to_string(c % cols) + ")");
    }
    tiles.push_back(render_surface(*cell[c]));
  }
  return compose_grid(tiles, rows, cols, style);
}

std::pair<std::size_t, std::size_t> grid_shape(std::size_t n) {
  if (n == 0) throw ShapeError("grid_shape: no tiles");
  std::size_t rows = 1;
  for (std::size_t r = 1; r * r <= n; ++r) {
    if (n % r == 0) rows = r;
  }
  return {rows, n / rows};
}

template <typename T>
Image class_grid(const std::vector<Hypersurface<T>>& surfaces, GridStyle style) {
  require_surfaces(surfaces, "class_grid");
  const std::size_t n = surfaces.size();
  std::vector<const Hypersurface<T>*> slot(n, nullptr);
  for (const auto& h : surfaces) {
    const long idx = h.mode == Mode::rm0 ? h.index.k : h.index.i;
    if (idx < 0 || static_cast<std::size_t>(idx) >= n || slot[static_cast<std::size_t>(idx)]) {
      throw IndexError("class_grid: indices must cover 0.." + std::to_string(n - 1) + " exactly once");
    }
    slot[static_cast<std::size_t>(idx)] = &h;
  }
  std::vector<Image> tiles;
  for (const auto* h : slot) tiles.push_back(render_surface(*h));
  const auto [rows, cols] = grid_shape(n);
  return compose_grid(tiles, rows, cols, style);
}

template <typename T>
Image difference_image(const Hypersurface<T>& a, const Hypersurface<T>& b) {
  require_same_shape(a.values.shape(), b.values.shape(), "difference_image");
  Tensor<double> d(a.values.shape());
  for (std::size_t e = 0; e < d.size(); ++e) d[e] = static_cast<double>(a.values[e]) - static_cast<double>(b.values[e]);
  return to_image(normalize_abs(d));
}

std::vector<std::uint8_t> encode_png(const Image& image) {
  if (image.width == 0 || image.height == 0 || image.rgb.size() != image.width * image.height * 3) {
    throw ShapeError("encode_png: empty or inconsistent image");
  }
  std::vector<std::uint8_t> out(kPngSignature.begin(), kPngSignature.end());
  std::vector<std::uint8_t> header;
  put_be32(header, static_cast<std::uint32_t>(image.width));
  put_be32(header, static_cast<std::uint32_t>(image.height));
  header.insert(header.end(), {8, 2, 0, 0, 0});  // 8-bit, truecolour, deflate, no filter method variants, no interlace
  put_chunk(out, "IHDR", header);
  std::vector<std::uint8_t> raw;
  raw.reserve(image.height * (1 + image.width * 3));
  for (std::size_t y = 0; y < image.height; ++y) {
    raw.push_back(0);
    raw.insert(raw.end(), image.rgb.begin() + static_cast<std::ptrdiff_t>(y * image.width * 3),
               image.rgb.begin() + static_cast<std::ptrdiff_t>((y + 1) * image.width * 3));
  }
  put_chunk(out, "IDAT", zlib_stored(raw));
  put_chunk(out, "IEND", {});
  return out;
}

std::vector<std::uint8_t> encode_ppm(const Image& image) {
  if (image.width == 0 || image.height == 0 || image.rgb.size() != image.width * image.height * 3) {
    throw ShapeError("encode_ppm: empty or inconsistent image");
  }
  const std::string header = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.rgb.begin(), image.rgb.end());
  return out;
}

Image decode_png(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || !std::equal(kPngSignature.begin(), kPngSignature.end(), bytes.begin())) {
    throw FormatError(FormatError::Kind::bad_magic, "not a PNG file");
  }
  std::size_t pos = 8;
  std::size_t width = 0, height = 0, channels = 0;
  std::vector<std::uint8_t> idat;
  bool ended = false;
  while (!ended) {
    if (pos + 12 > bytes.size()) throw FormatError(FormatError::Kind::truncated, "PNG ends inside a chunk header");
    const std::uint32_t len = get_be32(bytes.data() + pos);
    if (pos + 12 + static_cast<std::size_t>(len) > bytes.size()) throw FormatError(FormatError::Kind::truncated, "PNG chunk runs past the end");
    const std::string type(reinterpret_cast<const char*>(bytes.data() + pos + 4), 4);
    const std::uint8_t* data = bytes.data() + pos + 8;
    if (get_be32(data + len) != detail::crc32_of(bytes.data() + pos + 4, len + 4)) {
      throw FormatError(FormatError::Kind::crc_mismatch, "PNG chunk " + type + " fails its CRC");
    }
    if (type == "IHDR") {
      if (len != 13) throw bad_image("PNG IHDR has the wrong length");
      width = get_be32(data);
      height = get_be32(data + 4);
      const std::uint8_t depth = data[8], colour = data[9], interlace = data[12];
      if (depth != 8 || interlace != 0 || (colour != 2 && colour != 0)) {
        throw bad_image("only 8-bit non-interlaced greyscale or RGB PNG is supported");
      }
      channels = colour == 2 ? 3 : 1;
    } else if (type == "IDAT") {
      idat.insert(idat.end(), data, data + len);
    } else if (type == "IEND") {
      ended = true;
    }
    pos += 12 + len;
  }
  if (width == 0 || height == 0) throw bad_image("PNG without IHDR");
  const std::size_t stride = width * channels;
  const auto raw = inflate_all(idat, height * (stride + 1));
  Image im = blank(width, height, 0);
  std::vector<std::uint8_t> prev(stride, 0), cur(stride);
  for (std::size_t y = 0; y < height; ++y) {
    const std::uint8_t filter = raw[y * (stride + 1)];
    const std::uint8_t* src = raw.data() + y * (stride + 1) + 1;
    for (std::size_t x = 0; x < stride; ++x) {
      const int a = x >= channels ? cur[x - channels] : 0, b = prev[x], c = x >= channels ? prev[x - channels] : 0;
      int pred = 0;
      switch (filter) {
        case 0: pred = 0; break;
        case 1: pred = a; break;
        case 2: pred = b; break;
        case 3: pred = (a + b) / 2; break;
        case 4: pred = paeth(a, b, c); break;
        default: throw bad_image("PNG row uses unknown filter " + std::to_string(filter));
      }
      cur[x] = static_cast<std::uint8_t>(src[x] + pred);
    }
    for (std::size_t x = 0; x < width; ++x) {
      for (std::size_t ch = 0; ch < 3; ++ch) im.rgb[(y * width + x) * 3 + ch] = cur[x * channels + (channels == 3 ? ch : 0)];
    }
    std::swap(prev, cur);
  }
  return im;
}

Image decode_ppm(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
    if (t.empty()) throw FormatError(FormatError::Kind::truncated, "PPM header ends early");
    return t;
  };
  if (token() != "P6") throw FormatError(FormatError::Kind::bad_magic, "not a binary PPM (P6) file");
  const std::size_t width = std::stoul(token()), height = std::stoul(token());
  if (token() != "255") throw bad_image("only 8-bit PPM is supported");
  ++pos;
  if (bytes.size() - std::min(pos, bytes.size()) < width * height * 3) {
    throw FormatError(FormatError::Kind::truncated, "PPM pixel data is short");
  }
  Image im;
  im.width = width;
  im.height = height;
  im.rgb.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                bytes.begin() + static_cast<std::ptrdiff_t>(pos + width * height * 3));
  return im;
}

void write_image(const Image& image, const std::filesystem::path& path, ImageFormat format) {
  detail::write_file(path, format == ImageFormat::png ? encode_png(image) : encode_ppm(image));
}

Image read_image(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  return path.extension() == ".ppm" ? decode_ppm(bytes) : decode_png(bytes);
}

std::string surface_filename(const std::string& arch, Mode mode, const SurfaceIndex& index, ImageFormat format) {
  const std::string layer = index.layer >= 0 ? "conv" + std::to_string(index.layer) : "fc";
  return arch + "_" + to_string(mode) + "_" + layer + index_text(index.s) + index_text(index.j) + index_text(index.i) +
         index_text(index.k) + (format == ImageFormat::png ? ".png" : ".ppm");
}

template <typename T>
std::vector<std::filesystem::path> render_archive(const SurfaceArchive<T>& archive, const std::string& arch,
                                                  std::size_t grid_width, const std::filesystem::path& dir,
                                                  ImageFormat format) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  auto emit = [&](const Image& im, SurfaceIndex index) {
    index.layer = archive.layer;
    const auto path = dir / surface_filename(arch, archive.mode, index, format);
    write_image(im, path, format);
    written.push_back(path);
  };
  auto one_per_surface = [&](const std::vector<const Hypersurface<T>*>& group) {
    for (const auto* h : group) emit(render_surface(*h), h->index);
  };
  auto try_sheet = [&](const std::vector<const Hypersurface<T>*>& group, SurfaceIndex name, auto&& make) {
    std::vector<Hypersurface<T>> copies;
    for (const auto* h : group) copies.push_back(*h);
    try {
      emit(make(copies), name);
    } catch (const IndexError&) {
      one_per_surface(group);
    } catch (const ShapeError&) {
      one_per_surface(group);
    }
  };
  switch (archive.mode) {
    case Mode::rm4:
    case Mode::rm2: {
      std::map<std::pair<long, long>, std::vector<const Hypersurface<T>*>> groups;
      for (const auto& h : archive.surfaces) groups[{h.index.j, h.index.i}].push_back(&h);
      for (const auto& [key, group] : groups) {
        std::size_t width = grid_width;
        if (width == 0) width = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(group.size()))));
        try_sheet(group, SurfaceIndex{-1, -1, key.first, key.second, -1},
                  [&](const std::vector<Hypersurface<T>>& s) { return tile_strides(s, width); });
      }
      break;
    }
    case Mode::rm3: {
      std::vector<const Hypersurface<T>*> all;
      for (const auto& h : archive.surfaces) all.push_back(&h);
      try_sheet(all, SurfaceIndex{}, [](const std::vector<Hypersurface<T>>& s) { return tile_channels(s); });
      break;
    }
    case Mode::rm1:
    case Mode::rm0: {
      std::vector<const Hypersurface<T>*> all;
      for (const auto& h : archive.surfaces) all.push_back(&h);
      try_sheet(all, SurfaceIndex{}, [](const std::vector<Hypersurface<T>>& s) { return class_grid(s); });
      break;
    }
  }
  return written;
}

#define ABM_INSTANTIATE_RENDER(T)                                                                          \
  template Tensor<double> normalize_abs(const Tensor<T>&);                                                 \
  template Image tile_strides(const std::vector<Hypersurface<T>>&, std::size_t, GridStyle);               \
  template Image tile_channels(const std::vector<Hypersurface<T>>&, GridStyle);                           \
  template Image class_grid(const std::vector<Hypersurface<T>>&, GridStyle);                              \
  template Image difference_image(const Hypersurface<T>&, const Hypersurface<T>&);                        \
  template std::vector<std::filesystem::path> render_archive(const SurfaceArchive<T>&, const std::string&, \
                                                             std::size_t, const std::filesystem::path&,   \
                                                             ImageFormat);

ABM_INSTANTIATE_RENDER(float)
ABM_INSTANTIATE_RENDER(double)

}  // namespace abm
