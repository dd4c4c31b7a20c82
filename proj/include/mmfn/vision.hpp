#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mmfn/nn.hpp"
#include "mmfn/rng.hpp"
#include "mmfn/tensor.hpp"

namespace mmfn {

// RGB image, channel-interleaved rows, values in [0,1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;  // height * width * 3

  static Image blank(std::size_t height, std::size_t width, double value = 0.0);
  double& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * 3 + c]; }
  double at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * 3 + c]; }
  bool operator==(const Image&) const = default;
};

enum class Augmentation { hflip, grayscale, hue_shift, rotate90, scale_crop };

Augmentation parse_augmentation(std::string_view name);
std::string_view augmentation_name(Augmentation op);
std::vector<Augmentation> all_augmentations();

// Deterministic given (op, seed); only scale_crop consumes the seed.
Image augment(const Image& img, Augmentation op, std::uint64_t seed);
Augmentation pick_augmentation(std::uint64_t draw, std::span<const Augmentation> set);

Image resize_nearest(const Image& img, std::size_t side);

// P6 (and P5, broadcast to RGB) 8-bit PPM/PGM.
Image read_ppm(const std::filesystem::path& path);
void write_ppm(const Image& img, const std::filesystem::path& path);

struct EncoderConfig {
  std::size_t image_side = 32;
  std::size_t patch_size = 8;
  std::size_t model_dim = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;

  void validate() const;
  std::size_t patches_per_side() const { return image_side / patch_size; }
  std::size_t num_patches() const { return patches_per_side() * patches_per_side(); }
  std::size_t patch_dim() const { return patch_size * patch_size * 3; }
};

// [num_patches × patch²·3], patches row-major, pixels row-major inside a patch.
Tensor patchify(const Image& img, const EncoderConfig& cfg);
Image assemble_patches(const Tensor& patches, const EncoderConfig& cfg);

struct ImageEncoder {
  Linear patch_embed;
  Tensor positions;  // [num_patches × model_dim]
  std::vector<TransformerBlock> blocks;
  LayerNorm final_norm;
  Linear head;  // projection applied to the pooled feature

  static ImageEncoder init(const EncoderConfig& cfg, Rng& rng);
  template <class F>
  void visit(const std::string& prefix, F&& f) {
    patch_embed.visit(prefix + ".patch_embed", f);
    f(prefix + ".positions", positions);
    for (std::size_t l = 0; l < blocks.size(); ++l) blocks[l].visit(prefix + ".block" + std::to_string(l), f);
    final_norm.visit(prefix + ".final_norm", f);
    head.visit(prefix + ".head", f);
  }
};

// For a batch of B images the rows are stacked image by image.
struct EncodedImage {
  Tensor pooled;   // [B × model_dim], unit L2 norm rows
  Tensor patches;  // [B·num_patches × model_dim]
};

EncodedImage encode_image(const Image& img, const ImageEncoder& enc, const EncoderConfig& cfg);
EncodedImage encode_images(const std::vector<Image>& imgs, const ImageEncoder& enc, const EncoderConfig& cfg);
// Same network on already patchified input, B·num_patches rows.
EncodedImage encode_patches(const Tensor& patches, const ImageEncoder& enc, const EncoderConfig& cfg);

}  // namespace mmfn
