#include "mmfn/vision.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "mmfn/errors.hpp"

namespace mmfn {

Image Image::blank(std::size_t height, std::size_t width, double value) {
  return Image{height, width, std::vector<double>(height * width * 3, value)};
}

namespace {

constexpr std::array<std::pair<Augmentation, std::string_view>, 5> kAugNames{{
    {Augmentation::hflip, "hflip"},
    {Augmentation::grayscale, "grayscale"},
    {Augmentation::hue_shift, "hue_shift"},
    {Augmentation::rotate90, "rotate90"},
    {Augmentation::scale_crop, "scale_crop"},
}};

}  // namespace

Augmentation parse_augmentation(std::string_view name) {
  for (const auto& [op, n] : kAugNames)
    if (n == name) return op;
  throw ConfigError("unknown augmentation '" + std::string(name) + "'");
}

std::string_view augmentation_name(Augmentation op) {
  for (const auto& [o, n] : kAugNames)
    if (o == op) return n;
  throw ConfigError("unknown augmentation id");
}

std::vector<Augmentation> all_augmentations() {
  std::vector<Augmentation> out;
  for (const auto& [op, n] : kAugNames) out.push_back(op);
  return out;
}

Image augment(const Image& img, Augmentation op, std::uint64_t seed) {
  const std::size_t h = img.height, w = img.width;
  Image out = img;
  switch (op) {
    case Augmentation::hflip:
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y, w - 1 - x, c);
      break;
    case Augmentation::grayscale:
      // BT.601 luma
      for (std::size_t p = 0; p < h * w; ++p) {
        const double* px = img.pixels.data() + p * 3;
        const double l = std::clamp(0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2], 0.0, 1.0);
        out.pixels[p * 3] = out.pixels[p * 3 + 1] = out.pixels[p * 3 + 2] = l;
      }
      break;
    case Augmentation::hue_shift:
      // channel rotation R->G->B->R
      for (std::size_t p = 0; p < h * w; ++p) {
        out.pixels[p * 3 + 1] = img.pixels[p * 3 + 0];
        out.pixels[p * 3 + 2] = img.pixels[p * 3 + 1];
        out.pixels[p * 3 + 0] = img.pixels[p * 3 + 2];
      }
      break;
    case Augmentation::rotate90:
      if (h != w) throw DimensionError("rotate90 needs a square image");
      // clockwise: out(y, x) = in(h-1-x, y)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = img.at(h - 1 - x, y, c);
      break;
    case Augmentation::scale_crop: {
      Rng rng(seed);
      const double frac = rng.uniform(0.6, 1.0);
      const std::size_t ch = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(frac * static_cast<double>(h))));
      const std::size_t cw = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(frac * static_cast<double>(w))));
      const std::size_t oy = static_cast<std::size_t>(rng.below(h - ch + 1));
      const std::size_t ox = static_cast<std::size_t>(rng.below(w - cw + 1));
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const std::size_t sy = oy + y * ch / h;
          const std::size_t sx = ox + x * cw / w;
          for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = img.at(sy, sx, c);
        }
      break;
    }
    default:
      throw ConfigError("unknown augmentation id");
  }
  return out;
}

Augmentation pick_augmentation(std::uint64_t draw, std::span<const Augmentation> set) {
  if (set.empty()) throw ConfigError("empty augmentation set");
  return set[splitmix64(draw) % set.size()];
}

Image resize_nearest(const Image& img, std::size_t side) {
  if (img.height == side && img.width == side) return img;
  if (img.height == 0 || img.width == 0) throw DataError("cannot resize an empty image");
  Image out = Image::blank(side, side);
  for (std::size_t y = 0; y < side; ++y)
    for (std::size_t x = 0; x < side; ++x) {
      const std::size_t sy = y * img.height / side;
      const std::size_t sx = x * img.width / side;
      for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = img.at(sy, sx, c);
    }
  return out;
}

namespace {

// Reads one header token, skipping whitespace and '#' comments.
std::string ppm_token(std::istream& is) {
  std::string tok;
  char ch = 0;
  while (is.get(ch)) {
    if (ch == '#') {
      std::string line;
      std::getline(is, line);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(ch);
  }
  return tok;
}

}  // namespace

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open image " + path.string());
  const std::string magic = ppm_token(is);
  if (magic != "P6" && magic != "P5") throw DataError("not a binary PPM/PGM: " + path.string());
  const std::size_t channels = magic == "P6" ? 3 : 1;
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(ppm_token(is));
    h = std::stoul(ppm_token(is));
    maxval = std::stoul(ppm_token(is));
  } catch (const std::exception&) {
    throw DataError("malformed PPM header: " + path.string());
  }
  if (w == 0 || h == 0 || maxval == 0 || maxval > 255) throw DataError("unsupported PPM geometry: " + path.string());
  std::vector<unsigned char> raw(w * h * channels);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(is.gcount()) != raw.size()) throw DataError("truncated PPM payload: " + path.string());
  Image img = Image::blank(h, w);
  const double scale = static_cast<double>(maxval);
  for (std::size_t p = 0; p < w * h; ++p)
    for (std::size_t c = 0; c < 3; ++c)
      img.pixels[p * 3 + c] = std::min(1.0, raw[p * channels + (channels == 3 ? c : 0)] / scale);
  return img;
}

void write_ppm(const Image& img, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write image " + path.string());
  os << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  std::vector<unsigned char> raw(img.pixels.size());
  for (std::size_t i = 0; i < raw.size(); ++i)
    raw[i] = static_cast<unsigned char>(std::lround(std::clamp(img.pixels[i], 0.0, 1.0) * 255.0));
  os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!os) throw IoError("failed writing image " + path.string());
}

void EncoderConfig::validate() const {
  if (patch_size == 0 || image_side == 0 || image_side % patch_size != 0)
    throw ConfigError("image_side " + std::to_string(image_side) + " is not a multiple of patch_size " +
                      std::to_string(patch_size));
  if (heads == 0 || model_dim % heads != 0)
    throw ConfigError("model_dim " + std::to_string(model_dim) + " is not divisible by heads " +
                      std::to_string(heads));
}

Tensor patchify(const Image& img, const EncoderConfig& cfg) {
  const std::size_t ps = cfg.patch_size;
  if (ps == 0 || img.height != cfg.image_side || img.width != cfg.image_side || img.height % ps != 0)
    throw DimensionError("patchify: image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                         " does not tile into " + std::to_string(ps) + "-pixel patches of a " +
                         std::to_string(cfg.image_side) + " side");
  const std::size_t per_side = img.width / ps;
  const std::size_t pd = cfg.patch_dim();
  std::vector<double> out(per_side * per_side * pd);
  for (std::size_t py = 0; py < per_side; ++py)
    for (std::size_t px = 0; px < per_side; ++px) {
      double* dst = out.data() + (py * per_side + px) * pd;
      for (std::size_t y = 0; y < ps; ++y) {
        const double* src = img.pixels.data() + ((py * ps + y) * img.width + px * ps) * 3;
        std::copy_n(src, ps * 3, dst + y * ps * 3);
      }
    }
  return Tensor::from({per_side * per_side, pd}, std::move(out));
}

Image assemble_patches(const Tensor& patches, const EncoderConfig& cfg) {
  const std::size_t ps = cfg.patch_size, per_side = cfg.patches_per_side(), pd = cfg.patch_dim();
  if (patches.rows() != per_side * per_side || patches.cols() != pd)
    throw DimensionError("assemble_patches: " + shape_str(patches.shape()) + " does not match the configured grid");
  Image img = Image::blank(cfg.image_side, cfg.image_side);
  const auto v = patches.data();
  for (std::size_t py = 0; py < per_side; ++py)
    for (std::size_t px = 0; px < per_side; ++px) {
      const double* src = v.data() + (py * per_side + px) * pd;
      for (std::size_t y = 0; y < ps; ++y)
        std::copy_n(src + y * ps * 3, ps * 3, img.pixels.data() + ((py * ps + y) * img.width + px * ps) * 3);
    }
  return img;
}

ImageEncoder ImageEncoder::init(const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  ImageEncoder enc;
  enc.patch_embed = Linear::init(cfg.patch_dim(), cfg.model_dim, rng);
  enc.positions = normal_param({cfg.num_patches(), cfg.model_dim}, 0.02, rng);
  for (std::size_t l = 0; l < cfg.layers; ++l) enc.blocks.push_back(TransformerBlock::init(cfg.model_dim, cfg.heads, rng));
  enc.final_norm = LayerNorm::init(cfg.model_dim);
  enc.head = Linear::init(cfg.model_dim, cfg.model_dim, rng);
  return enc;
}

EncodedImage encode_patches(const Tensor& patches, const ImageEncoder& enc, const EncoderConfig& cfg) {
  const std::size_t np = cfg.num_patches();
  if (patches.rank() != 2 || patches.rows() == 0 || patches.rows() % np != 0 || patches.cols() != cfg.patch_dim() ||
      enc.patch_embed.weight.shape() != Shape{cfg.patch_dim(), cfg.model_dim} ||
      enc.positions.shape() != Shape{np, cfg.model_dim})
    throw DimensionError("encode_image: encoder weights " + shape_str(enc.patch_embed.weight.shape()) + "/" +
                         shape_str(enc.positions.shape()) + " inconsistent with input " + shape_str(patches.shape()));
  const std::size_t batch = patches.rows() / np;
  std::vector<std::size_t> segments(batch, np);
  Tensor x = enc.patch_embed(patches);
  if (batch == 1) {
    x = add(x, enc.positions);
  } else {
    std::vector<std::size_t> pos(batch * np);
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i % np;
    x = add(x, embedding(enc.positions, pos));
  }
  for (const auto& block : enc.blocks) x = block(x, false, segments);
  Tensor seq = enc.final_norm(x);
  Tensor pooled = l2_normalize_rows(enc.head(batch == 1 ? mean_rows(seq) : segment_mean_rows(seq, segments)));
  return {pooled, seq};
}

EncodedImage encode_image(const Image& img, const ImageEncoder& enc, const EncoderConfig& cfg) {
  return encode_patches(patchify(img, cfg), enc, cfg);
}

EncodedImage encode_images(const std::vector<Image>& imgs, const ImageEncoder& enc, const EncoderConfig& cfg) {
  if (imgs.empty()) throw DimensionError("encode_images: empty batch");
  std::vector<double> stacked;
  stacked.reserve(imgs.size() * cfg.num_patches() * cfg.patch_dim());
  for (const auto& img : imgs) {
    const Tensor p = patchify(img, cfg);
    stacked.insert(stacked.end(), p.data().begin(), p.data().end());
  }
  return encode_patches(Tensor::from({imgs.size() * cfg.num_patches(), cfg.patch_dim()}, std::move(stacked)), enc,
                        cfg);
}

}  // namespace mmfn
