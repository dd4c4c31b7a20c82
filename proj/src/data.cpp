#include "mmfn/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <regex>
#include <set>
#include <sstream>
#include <unordered_set>

#include "mmfn/assets.hpp"
#include "mmfn/config.hpp"
#include "mmfn/errors.hpp"

namespace mmfn {

Split parse_split(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw DataError("unknown split '" + std::string(name) + "'");
}

std::string_view split_name(Split s) {
  switch (s) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
  }
  return "?";
}

const std::vector<std::string>& SplitManifest::ids(Split s) const {
  switch (s) {
    case Split::train:
      return train;
    case Split::val:
      return val;
    default:
      return test;
  }
}

std::vector<const NewsRecord*> Dataset::split(Split s) const {
  std::vector<const NewsRecord*> out;
  for (const auto& r : records)
    if (r.split == s) out.push_back(&r);
  return out;
}

SplitManifest build_manifest(const std::vector<NewsRecord>& records) {
  SplitManifest m;
  for (const auto& r : records) {
    switch (r.split) {
      case Split::train:
        m.train.push_back(r.id);
        break;
      case Split::val:
        m.val.push_back(r.id);
        break;
      case Split::test:
        m.test.push_back(r.id);
        break;
    }
    ++m.counts[static_cast<std::size_t>(r.split)][static_cast<std::size_t>(r.label)];
  }
  return m;
}

// ---------------------------------------------------------------- synthetic

void SyntheticSpec::validate() const {
  if (num_records == 0) throw ConfigError("num_records must be positive");
  if (!(mismatch_rate >= 0.0 && mismatch_rate < 1.0)) throw ConfigError("mismatch_rate must lie in [0,1)");
  if (!(noise >= 0.0)) throw ConfigError("noise must be non-negative");
  if (!(caption_noise_rate >= 0.0 && caption_noise_rate <= 1.0)) throw ConfigError("caption_noise_rate outside [0,1]");
  if (image_side < 8) throw ConfigError("image_side must be at least 8");
}

SyntheticSpec SyntheticSpec::parse(std::string_view text) {
  SyntheticSpec spec;
  for (const auto& [key, value] : parse_key_values(text)) {
    if (key == "num_records") spec.num_records = parse_size(key, value);
    else if (key == "mismatch_rate") spec.mismatch_rate = parse_double(key, value);
    else if (key == "noise") spec.noise = parse_double(key, value);
    else if (key == "caption_noise_rate") spec.caption_noise_rate = parse_double(key, value);
    else if (key == "image_side") spec.image_side = parse_size(key, value);
    else if (key == "seed") spec.seed = parse_size(key, value);
    else throw ConfigError("unknown synthetic spec key '" + key + "'");
  }
  spec.validate();
  return spec;
}

SyntheticSpec SyntheticSpec::load(const std::filesystem::path& path) { return parse(read_text_file(path)); }

namespace {

constexpr std::array<std::array<double, 3>, 4> kColorRgb{{
    {0.9, 0.1, 0.1},
    {0.1, 0.8, 0.1},
    {0.1, 0.2, 0.9},
    {0.9, 0.9, 0.1},
}};

constexpr std::array<std::string_view, 4> kCaptionTemplates{
    "a photo of a {color} {shape}",
    "breaking: {color} {shape} spotted downtown",
    "this picture shows a {color} {shape}",
    "look at the {color} {shape} everyone is talking about",
};

constexpr std::array<std::string_view, 3> kNoiseWords{"shocking", "unbelievable", "outrageous"};

std::string fill_caption(std::string_view tmpl, std::string_view color, std::string_view shape) {
  std::string s(tmpl);
  s.replace(s.find("{color}"), 7, color);
  s.replace(s.find("{shape}"), 7, shape);
  return s;
}

bool inside_shape(std::size_t shape, double dx, double dy, double r) {
  switch (shape) {
    case 0:
      return dx * dx + dy * dy <= r * r;
    case 1:
      return std::abs(dx) <= 0.8 * r && std::abs(dy) <= 0.8 * r;
    case 2: {
      // apex up, base at dy = +r
      if (dy < -r || dy > r) return false;
      const double half = 0.5 * (dy + r);
      return std::abs(dx) <= half;
    }
    default: {
      const double arm = r / 3.0;
      return (std::abs(dx) <= arm && std::abs(dy) <= r) || (std::abs(dy) <= arm && std::abs(dx) <= r);
    }
  }
}

}  // namespace

Image render_shape(std::size_t shape, std::size_t color, double cx, double cy, double radius, std::size_t side) {
  Image img = Image::blank(side, side, 0.5);
  const auto& rgb = kColorRgb.at(color);
  for (std::size_t y = 0; y < side; ++y)
    for (std::size_t x = 0; x < side; ++x) {
      const double dx = static_cast<double>(x) + 0.5 - cx;
      const double dy = static_cast<double>(y) + 0.5 - cy;
      if (inside_shape(shape, dx, dy, radius))
        for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = rgb[c];
    }
  return img;
}

std::optional<std::pair<std::size_t, std::size_t>> caption_attributes(std::string_view caption) {
  std::optional<std::size_t> shape, color;
  std::string word;
  auto consider = [&] {
    for (std::size_t i = 0; i < kShapeNames.size(); ++i)
      if (word == kShapeNames[i]) {
        if (shape) shape = kShapeNames.size();
        else shape = i;
      }
    for (std::size_t i = 0; i < kColorNames.size(); ++i)
      if (word == kColorNames[i]) {
        if (color) color = kColorNames.size();
        else color = i;
      }
    word.clear();
  };
  for (char ch : caption) {
    if (std::isalpha(static_cast<unsigned char>(ch))) word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    else consider();
  }
  consider();
  if (!shape || !color || *shape >= kShapeNames.size() || *color >= kColorNames.size()) return std::nullopt;
  return std::make_pair(*shape, *color);
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng = Rng::stream(spec.seed, "data");
  Dataset ds;
  ds.records.reserve(spec.num_records);
  const double side = static_cast<double>(spec.image_side);
  const std::size_t n_train = spec.num_records * 8 / 10;
  const std::size_t n_val = spec.num_records * 9 / 10;
  // Each split gets exactly round(n * mismatch_rate) fakes at shuffled positions,
  // so no split carries a class-prior signal.
  std::vector<char> fake_flags;
  fake_flags.reserve(spec.num_records);
  for (const auto [lo, hi] : {std::pair{std::size_t{0}, n_train}, std::pair{n_train, n_val},
                              std::pair{n_val, spec.num_records}}) {
    const std::size_t n = hi - lo;
    const auto k = static_cast<std::size_t>(std::llround(static_cast<double>(n) * spec.mismatch_rate));
    std::vector<char> block(n, 0);
    std::fill_n(block.begin(), k, 1);
    rng.shuffle(block);
    fake_flags.insert(fake_flags.end(), block.begin(), block.end());
  }
  for (std::size_t i = 0; i < spec.num_records; ++i) {
    SyntheticAttributes attr;
    attr.rendered_shape = static_cast<std::size_t>(rng.below(4));
    attr.rendered_color = static_cast<std::size_t>(rng.below(4));
    const double radius = rng.uniform(0.16, 0.28) * side;
    const double cx = rng.uniform(radius, side - radius);
    const double cy = rng.uniform(radius, side - radius);
    Image img = render_shape(attr.rendered_shape, attr.rendered_color, cx, cy, radius, spec.image_side);
    if (spec.noise > 0.0)
      for (double& p : img.pixels) p = std::clamp(p + rng.normal(0.0, spec.noise), 0.0, 1.0);

    const bool fake = fake_flags[i] != 0;
    attr.caption_shape = attr.rendered_shape;
    attr.caption_color = attr.rendered_color;
    if (fake) {
      // uniform over the 15 other (shape, color) pairs
      const std::size_t here = attr.rendered_shape * 4 + attr.rendered_color;
      std::size_t other = static_cast<std::size_t>(rng.below(15));
      if (other >= here) ++other;
      attr.caption_shape = other / 4;
      attr.caption_color = other % 4;
    }
    const auto& tmpl = kCaptionTemplates[rng.below(kCaptionTemplates.size())];
    std::string caption = fill_caption(tmpl, kColorNames[attr.caption_color], kShapeNames[attr.caption_shape]);
    if (fake && rng.uniform() < spec.caption_noise_rate) {
      attr.caption_noise = true;
      caption += ", ";
      caption += kNoiseWords[rng.below(kNoiseWords.size())];
    }

    std::ostringstream id;
    id << "syn" << std::setw(6) << std::setfill('0') << i;
    NewsRecord rec;
    rec.id = id.str();
    rec.text = std::move(caption);
    rec.image = std::move(img);
    rec.label = fake ? Label::fake : Label::real;
    rec.split = i < n_train ? Split::train : (i < n_val ? Split::val : Split::test);
    rec.attributes = attr;
    ds.records.push_back(std::move(rec));
  }
  ds.manifest = build_manifest(ds.records);
  return ds;
}

// ---------------------------------------------------------------- on-disk layout

namespace {

std::string tsv_safe(std::string s) {
  for (char& c : s)
    if (c == '\t' || c == '\n' || c == '\r') c = ' ';
  return s;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto tab = line.find('\t', start);
    if (tab == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

constexpr std::string_view kManifestHeader = "id\ttext\timage_path\tlabel\tsplit";

}  // namespace

void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  std::ofstream os(dir / "manifest.tsv", std::ios::binary);
  if (!os) throw IoError("cannot write " + (dir / "manifest.tsv").string());
  os << kManifestHeader << '\n';
  for (const auto& r : ds.records) {
    const std::string rel = "images/" + r.id + ".ppm";
    write_ppm(r.image, dir / rel);
    os << tsv_safe(r.id) << '\t' << tsv_safe(r.text) << '\t' << rel << '\t' << static_cast<int>(r.label) << '\t'
       << split_name(r.split) << '\n';
  }
  if (!os) throw IoError("failed writing manifest in " + dir.string());
}

Dataset ingest_manifest(const std::filesystem::path& manifest_path, std::size_t image_side) {
  std::ifstream is(manifest_path, std::ios::binary);
  if (!is) throw IoError("cannot read manifest " + manifest_path.string());
  const auto base = manifest_path.parent_path();
  Dataset ds;
  std::string line;
  if (!std::getline(is, line)) throw DataError("empty manifest " + manifest_path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kManifestHeader) throw DataError("manifest header must be '" + std::string(kManifestHeader) + "'");
  std::unordered_set<std::string> seen;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 5 || fields[0].empty() || seen.count(fields[0]) || (fields[3] != "0" && fields[3] != "1")) {
      ++ds.malformed;
      continue;
    }
    NewsRecord rec;
    rec.id = fields[0];
    rec.text = fields[1];
    rec.label = fields[3] == "0" ? Label::real : Label::fake;
    try {
      rec.split = parse_split(fields[4]);
    } catch (const DataError&) {
      ++ds.malformed;
      continue;
    }
    if (preprocess_text(rec.text).empty()) {
      ++ds.malformed;
      continue;
    }
    const std::filesystem::path img_path = base / fields[2];
    try {
      if (fields[2].empty() || !std::filesystem::is_regular_file(img_path)) throw DataError("missing image");
      rec.image = resize_nearest(read_ppm(img_path), image_side);
    } catch (const DataError&) {
      ++ds.dropped;
      continue;
    }
    seen.insert(rec.id);
    ds.records.push_back(std::move(rec));
  }
  ds.manifest = build_manifest(ds.records);
  return ds;
}

Dataset load_dataset(const std::filesystem::path& path, std::size_t image_side) {
  if (std::filesystem::is_directory(path)) return ingest_manifest(path / "manifest.tsv", image_side);
  return ingest_manifest(path, image_side);
}

// ---------------------------------------------------------------- preprocessing

const std::vector<std::string>& stop_words() {
  static const std::vector<std::string> words = [] {
    std::vector<std::string> out;
    std::istringstream is{std::string(assets::stopwords())};
    std::string w;
    while (is >> w) out.push_back(w);
    return out;
  }();
  return words;
}

std::string preprocess_text(std::string_view raw) {
  static const std::unordered_set<std::string> stops(stop_words().begin(), stop_words().end());
  static const std::regex url(R"(^[A-Za-z][A-Za-z0-9+.\-]*://|^www\.)", std::regex::icase);
  std::istringstream is{std::string(raw)};
  std::vector<std::string> kept;
  std::string tok;
  while (is >> tok) {
    if (std::regex_search(tok, url)) continue;
    std::size_t b = 0, e = tok.size();
    while (b < e && !std::isalnum(static_cast<unsigned char>(tok[b]))) ++b;
    while (e > b && !std::isalnum(static_cast<unsigned char>(tok[e - 1]))) --e;
    std::string core = tok.substr(b, e - b);
    std::string lower = core;
    for (char& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (!core.empty() && stops.count(lower)) {
      const bool capitalized = std::isupper(static_cast<unsigned char>(core[0])) != 0;
      const bool mid_sentence = !kept.empty() && kept.back().find_last_of(".!?") != kept.back().size() - 1;
      if (!(capitalized && mid_sentence)) continue;
    }
    kept.push_back(std::move(tok));
  }
  std::string out;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    if (i) out.push_back(' ');
    out += kept[i];
  }
  return out;
}

// ---------------------------------------------------------------- summaries

std::vector<SummaryRow> summarize(const Dataset& ds) {
  std::vector<SummaryRow> rows;
  for (Split s : {Split::train, Split::val, Split::test})
    for (Label l : {Label::real, Label::fake})
      rows.push_back({std::string(split_name(s)), l == Label::real ? "real" : "fake",
                      static_cast<double>(ds.manifest.counts[static_cast<std::size_t>(s)][static_cast<std::size_t>(l)]),
                      0});
  rows.push_back({"all", "all", static_cast<double>(ds.records.size()), ds.dropped});
  return rows;
}

std::string summary_csv(const std::vector<SummaryRow>& rows) {
  std::ostringstream os;
  os << "split,label,count,dropped\n";
  for (const auto& r : rows) os << r.split << ',' << r.label << ',' << r.count << ',' << r.dropped << '\n';
  return os.str();
}

std::vector<SummaryRow> parse_summary_csv(std::string_view text) {
  std::istringstream is{std::string(text)};
  std::string line;
  std::getline(is, line);
  if (line.rfind("split,label,count", 0) != 0) throw DataError("summary csv: unexpected header '" + line + "'");
  std::vector<SummaryRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() < 3) throw DataError("summary csv: short row '" + line + "'");
    SummaryRow r{f[0], f[1], 0.0, 0};
    std::string c = f[2];
    double mult = 1.0;
    if (!c.empty() && (c.back() == 'k' || c.back() == 'K')) {
      mult = 1000.0;
      c.pop_back();
    }
    try {
      r.count = std::stod(c) * mult;
      if (f.size() > 3) r.dropped = std::stoul(f[3]);
    } catch (const std::exception&) {
      throw DataError("summary csv: bad number in '" + line + "'");
    }
    rows.push_back(r);
  }
  return rows;
}

std::string summary_table(const std::vector<SummaryRow>& rows) {
  std::vector<std::string> order;
  std::map<std::string, std::pair<double, double>> per_split;
  for (const auto& r : rows) {
    if (r.split == "all") continue;
    if (!per_split.count(r.split)) order.push_back(r.split);
    auto& [real, fake] = per_split[r.split];
    const bool is_real = r.label == "real" || r.label == "true" || r.label == "0";
    (is_real ? real : fake) += r.count;
  }
  std::ostringstream os;
  os << std::left << std::setw(8) << "split" << std::right << std::setw(12) << "real" << std::setw(12) << "fake"
     << std::setw(12) << "fake_share" << '\n';
  for (const auto& s : order) {
    const auto [real, fake] = per_split[s];
    const double total = real + fake;
    os << std::left << std::setw(8) << s << std::right << std::fixed << std::setprecision(0) << std::setw(12) << real
       << std::setw(12) << fake << std::setprecision(4) << std::setw(12) << (total > 0 ? fake / total : 0.0) << '\n';
  }
  return os.str();
}

}  // namespace mmfn
