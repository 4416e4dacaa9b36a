#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "abm/backmap.hpp"

namespace abm {

/// 8-bit RGB raster, row-major, 3 bytes per pixel.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;

  bool operator==(const Image&) const = default;
};

/// |v| / max(max|v|, FLT_MIN) for every element: the largest magnitude maps to
/// exactly 1 and an all-zero surface stays zero.
template <typename T>
Tensor<double> normalize_abs(const Tensor<T>& surface);

/// Round half away from zero of v * 255, clamped to [0, 255].
std::uint8_t quantize(double v);

/// Quantized image of one (H, W, 1) or (H, W, 3) tensor with values in [0, 1];
/// single-channel data is repeated across R, G and B.
Image to_image(const Tensor<double>& unit_values);

struct GridStyle {
  std::size_t separator = 0;        // pixels between neighbouring tiles
  std::uint8_t separator_value = 255;
};

/// Places `tiles` (all the same size) on a rows x cols grid, row-major.
Image compose_grid(const std::vector<Image>& tiles, std::size_t rows, std::size_t cols, GridStyle style = {});

/// Sheet of one surface per stride offset: cell (r, c) holds s = r * grid_width + c.
/// Requires every s in [0, count) exactly once.
template <typename T>
Image tile_strides(const std::vector<Hypersurface<T>>& surfaces, std::size_t grid_width, GridStyle style = {});

/// Sheet of one surface per (in-channel j, out-channel i): row j, column i.
/// Requires the complete c_in x c_out grid.
template <typename T>
Image tile_channels(const std::vector<Hypersurface<T>>& surfaces, GridStyle style = {.separator = 0});

/// Rows and columns of the near-square layout for n tiles: rows is the largest
/// divisor of n not above sqrt(n).
std::pair<std::size_t, std::size_t> grid_shape(std::size_t n);

/// Per-class (rm0) or per-channel (rm1) tiles on the near-square layout with
/// 1-pixel white separators. Requires indices 0..n-1 each exactly once.
template <typename T>
Image class_grid(const std::vector<Hypersurface<T>>& surfaces, GridStyle style = {.separator = 1});

/// |a - b| normalized by its max-abs.
template <typename T>
Image difference_image(const Hypersurface<T>& a, const Hypersurface<T>& b);

enum class ImageFormat { png, ppm };

std::vector<std::uint8_t> encode_png(const Image& image);
std::vector<std::uint8_t> encode_ppm(const Image& image);
Image decode_png(const std::vector<std::uint8_t>& bytes);
Image decode_ppm(const std::vector<std::uint8_t>& bytes);

void write_image(const Image& image, const std::filesystem::path& path, ImageFormat format);
/// Format chosen from the extension (.png or .ppm).
Image read_image(const std::filesystem::path& path);

/// "{arch}_{mode}_{layer}[_{s}][_{j}][_{i}][_{k}].{png|ppm}" where layer is
/// "conv<N>" or "fc" and each index appears only when set.
std::string surface_filename(const std::string& arch, Mode mode, const SurfaceIndex& index,
                             ImageFormat format = ImageFormat::png);

/// Renders every sheet an archive supports into `dir` and returns the paths:
/// rm4 one stride sheet per (j, i), rm2 one per i, rm3 one channel sheet,
/// rm1 and rm0 one grid. Incomplete index sets fall back to one image per surface.
template <typename T>
std::vector<std::filesystem::path> render_archive(const SurfaceArchive<T>& archive, const std::string& arch,
                                                  std::size_t grid_width, const std::filesystem::path& dir,
                                                  ImageFormat format = ImageFormat::png);

}  // namespace abm
