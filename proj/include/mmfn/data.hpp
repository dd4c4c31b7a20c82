#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mmfn/vision.hpp"

namespace mmfn {

enum class Label : int { real = 0, fake = 1 };

enum class Split { train, val, test };
Split parse_split(std::string_view name);
std::string_view split_name(Split s);

// Attributes behind a synthetic record; absent for ingested data.
struct SyntheticAttributes {
  std::size_t rendered_shape = 0, rendered_color = 0;
  std::size_t caption_shape = 0, caption_color = 0;
  bool caption_noise = false;
};

struct NewsRecord {
  std::string id;
  std::string text;  // raw; preprocess_text is applied when building model inputs
  Image image;
  Label label = Label::real;
  Split split = Split::train;
  std::optional<SyntheticAttributes> attributes;
};

struct SplitManifest {
  std::vector<std::string> train, val, test;
  // counts[split][label]
  std::array<std::array<std::size_t, 2>, 3> counts{};

  const std::vector<std::string>& ids(Split s) const;
  std::size_t total() const { return train.size() + val.size() + test.size(); }
};

struct Dataset {
  std::vector<NewsRecord> records;
  SplitManifest manifest;
  std::size_t dropped = 0;    // rows whose image was missing or undecodable
  std::size_t malformed = 0;  // rows rejected for format or domain reasons

  std::vector<const NewsRecord*> split(Split s) const;
};

SplitManifest build_manifest(const std::vector<NewsRecord>& records);

inline constexpr std::array<std::string_view, 4> kShapeNames{"circle", "square", "triangle", "cross"};
inline constexpr std::array<std::string_view, 4> kColorNames{"red", "green", "blue", "yellow"};

struct SyntheticSpec {
  std::size_t num_records = 2000;
  double mismatch_rate = 0.5;  // exact share of fakes within each split
  double noise = 0.05;
  double caption_noise_rate = 0.1;  // share of fake records given tell-tale words
  std::size_t image_side = 32;
  std::uint64_t seed = 7;

  void validate() const;
  // key = value lines
  static SyntheticSpec parse(std::string_view text);
  static SyntheticSpec load(const std::filesystem::path& path);
};

Dataset generate_synthetic(const SyntheticSpec& spec);
Image render_shape(std::size_t shape, std::size_t color, double cx, double cy, double radius, std::size_t side);
// Shape and color named by a caption, if exactly one of each occurs.
std::optional<std::pair<std::size_t, std::size_t>> caption_attributes(std::string_view caption);

// Writes manifest.tsv and images/<id>.ppm.
void write_dataset(const Dataset& ds, const std::filesystem::path& dir);

// Parses a TSV manifest (id, text, image_path, label, split). Image paths are
// relative to the manifest's directory. Bad rows are skipped and counted.
Dataset ingest_manifest(const std::filesystem::path& manifest_path, std::size_t image_side = 32);
// Accepts a dataset directory or a manifest file.
Dataset load_dataset(const std::filesystem::path& path, std::size_t image_side = 32);

// URL tokens and stop words dropped; a capitalized stop word is kept when it
// follows a kept word that does not end a sentence. Whitespace collapsed.
std::string preprocess_text(std::string_view raw);
const std::vector<std::string>& stop_words();

// split,label,count,dropped rows.
struct SummaryRow {
  std::string split;
  std::string label;
  double count = 0;
  std::size_t dropped = 0;
};
std::vector<SummaryRow> summarize(const Dataset& ds);
std::string summary_csv(const std::vector<SummaryRow>& rows);
std::vector<SummaryRow> parse_summary_csv(std::string_view text);
// Per split: real, fake and fake share.
std::string summary_table(const std::vector<SummaryRow>& rows);

}  // namespace mmfn
