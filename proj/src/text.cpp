#include "mmfn/text.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "mmfn/errors.hpp"

namespace mmfn {

namespace {

std::uint64_t pair_key(TokenId l, TokenId r) { return (static_cast<std::uint64_t>(l) << 32) | r; }

// In-place merge of every non-overlapping (l, r) occurrence, left to right.
void merge_pair(std::vector<TokenId>& ids, TokenId l, TokenId r, TokenId merged) {
  std::size_t w = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i + 1 < ids.size() && ids[i] == l && ids[i + 1] == r) {
      ids[w++] = merged;
      ++i;
    } else {
      ids[w++] = ids[i];
    }
  }
  ids.resize(w);
}

std::vector<TokenId> byte_ids(std::string_view s) {
  std::vector<TokenId> ids;
  ids.reserve(s.size());
  for (unsigned char c : s) ids.push_back(c);
  return ids;
}

}  // namespace

BpeVocab::BpeVocab(std::size_t vocab_size, std::vector<std::pair<TokenId, TokenId>> merges)
    : vocab_size_(vocab_size), merges_(std::move(merges)) {
  if (kFirstMerge + merges_.size() > vocab_size_)
    throw DataError("bpe vocab: " + std::to_string(merges_.size()) + " merges exceed vocab_size " +
                    std::to_string(vocab_size_));
  rebuild();
}

void BpeVocab::rebuild() {
  token_bytes_.assign(kFirstMerge, std::string());
  for (std::size_t b = 0; b < kByteTokens; ++b) token_bytes_[b] = std::string(1, static_cast<char>(b));
  ranks_.clear();
  for (std::size_t r = 0; r < merges_.size(); ++r) {
    const auto [l, rt] = merges_[r];
    const TokenId id = kFirstMerge + r;
    if (l >= id || rt >= id || is_special(l) || is_special(rt))
      throw DataError("bpe vocab: merge " + std::to_string(r) + " references token not available at its rank");
    token_bytes_.push_back(token_bytes_[l] + token_bytes_[rt]);
    ranks_.emplace(pair_key(l, rt), static_cast<long>(r));
  }
}

const std::string& BpeVocab::bytes(TokenId id) const {
  if (id >= token_bytes_.size()) throw IndexError("bpe vocab: token id " + std::to_string(id) + " out of range");
  return token_bytes_[id];
}

long BpeVocab::rank(TokenId left, TokenId right) const {
  const auto it = ranks_.find(pair_key(left, right));
  return it == ranks_.end() ? -1 : it->second;
}

std::string BpeVocab::serialize() const {
  std::ostringstream os;
  os << "bpe-vocab v1 vocab_size=" << vocab_size_ << '\n';
  for (const auto& [l, r] : merges_) os << l << '\t' << r << '\n';
  return os.str();
}

BpeVocab BpeVocab::parse(std::string_view text) {
  std::istringstream is{std::string(text)};
  std::string line;
  if (!std::getline(is, line)) throw DataError("bpe vocab: empty file");
  const std::string prefix = "bpe-vocab v1 vocab_size=";
  if (line.rfind(prefix, 0) != 0) throw DataError("bpe vocab: bad header '" + line + "'");
  std::size_t vocab_size = 0;
  try {
    vocab_size = std::stoul(line.substr(prefix.size()));
  } catch (const std::exception&) {
    throw DataError("bpe vocab: bad vocab_size in header");
  }
  std::vector<std::pair<TokenId, TokenId>> merges;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw DataError("bpe vocab: line " + std::to_string(lineno) + " lacks a tab");
    try {
      merges.emplace_back(std::stoul(line.substr(0, tab)), std::stoul(line.substr(tab + 1)));
    } catch (const std::exception&) {
      throw DataError("bpe vocab: line " + std::to_string(lineno) + " is not an id pair");
    }
  }
  return BpeVocab(vocab_size, std::move(merges));
}

void BpeVocab::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write vocab " + path.string());
  os << serialize();
}

BpeVocab BpeVocab::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read vocab " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse(ss.str());
}

TokenSequence TokenSequence::padded(std::size_t len) const {
  TokenSequence out = *this;
  out.ids.resize(len, special::pad);
  return out;
}

std::vector<std::string_view> pretokenize(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 1; i <= text.size(); ++i) {
    if (i == text.size() || text[i] == ' ') {
      if (i > start) out.push_back(text.substr(start, i - start));
      start = i;
    }
  }
  return out;
}

BpeVocab bpe_train(const std::vector<std::string>& corpus, std::size_t vocab_size) {
  if (vocab_size <= BpeVocab::kFirstMerge)
    throw ConfigError("bpe_train: vocab_size must exceed " + std::to_string(BpeVocab::kFirstMerge));
  std::map<std::string, std::size_t> chunk_counts;
  for (const auto& s : corpus)
    for (auto chunk : pretokenize(s)) ++chunk_counts[std::string(chunk)];
  if (chunk_counts.empty()) throw DataError("bpe_train: empty corpus");

  std::vector<std::pair<std::vector<TokenId>, std::size_t>> words;
  words.reserve(chunk_counts.size());
  for (const auto& [chunk, n] : chunk_counts) words.emplace_back(byte_ids(chunk), n);

  std::vector<std::string> bytes(BpeVocab::kFirstMerge);
  for (std::size_t b = 0; b < BpeVocab::kByteTokens; ++b) bytes[b] = std::string(1, static_cast<char>(b));

  std::vector<std::pair<TokenId, TokenId>> merges;
  while (BpeVocab::kFirstMerge + merges.size() < vocab_size) {
    std::unordered_map<std::uint64_t, std::size_t> counts;
    for (const auto& [ids, n] : words)
      for (std::size_t i = 0; i + 1 < ids.size(); ++i) counts[pair_key(ids[i], ids[i + 1])] += n;
    std::uint64_t best = 0;
    std::size_t best_count = 0;
    for (const auto& [key, n] : counts) {
      if (n < best_count) continue;
      if (n > best_count) {
        best = key;
        best_count = n;
        continue;
      }
      const TokenId l = key >> 32, r = key & 0xFFFFFFFFu;
      const TokenId bl = best >> 32, br = best & 0xFFFFFFFFu;
      if (bytes[l] < bytes[bl] || (bytes[l] == bytes[bl] && bytes[r] < bytes[br])) best = key;
    }
    if (best_count < 2) break;
    const TokenId l = best >> 32, r = best & 0xFFFFFFFFu;
    const TokenId id = BpeVocab::kFirstMerge + merges.size();
    merges.emplace_back(l, r);
    bytes.push_back(bytes[l] + bytes[r]);
    for (auto& [ids, n] : words) merge_pair(ids, l, r, id);
  }
  return BpeVocab(vocab_size, std::move(merges));
}

std::vector<TokenId> tokenize_ids(std::string_view text, const BpeVocab& vocab) {
  std::vector<TokenId> out;
  for (auto chunk : pretokenize(text)) {
    std::vector<TokenId> ids = byte_ids(chunk);
    while (ids.size() > 1) {
      long best = -1;
      std::size_t at = 0;
      for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
        const long r = vocab.rank(ids[i], ids[i + 1]);
        if (r >= 0 && (best < 0 || r < best)) {
          best = r;
          at = i;
        }
      }
      if (best < 0) break;
      merge_pair(ids, ids[at], ids[at + 1], BpeVocab::kFirstMerge + static_cast<TokenId>(best));
    }
    out.insert(out.end(), ids.begin(), ids.end());
  }
  return out;
}

TokenSequence tokenize(std::string_view text, const BpeVocab& vocab, std::size_t max_len) {
  TokenSequence seq{tokenize_ids(text, vocab), max_len};
  if (seq.ids.size() > max_len) seq.ids.resize(max_len);
  return seq;
}

std::string detokenize(std::span<const TokenId> ids, const BpeVocab& vocab) {
  std::string out;
  for (TokenId id : ids)
    if (!BpeVocab::is_special(id)) out += vocab.bytes(id);
  return out;
}

Tensor embed_tokens(const TokenSequence& seq, const Tensor& table) { return embedding(table, seq.ids); }

}  // namespace mmfn
