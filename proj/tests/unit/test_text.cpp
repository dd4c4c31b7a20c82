#include <doctest.h>

#include <algorithm>

#include "mmfn/errors.hpp"
#include "mmfn/text.hpp"
#include "support.hpp"

using namespace mmfn;

namespace {

// Random UTF-8: ASCII, two-, three- and four-byte code points, spaces included.
std::string random_utf8(Rng& rng) {
  std::string s;
  const std::size_t n = rng.below(40);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t kind = rng.below(5);
    std::uint32_t cp = 0;
    if (kind == 0) cp = ' ';
    else if (kind == 1) cp = 0x21 + static_cast<std::uint32_t>(rng.below(0x5E));
    else if (kind == 2) cp = 0x80 + static_cast<std::uint32_t>(rng.below(0x780));
    else if (kind == 3) {
      cp = 0x800 + static_cast<std::uint32_t>(rng.below(0xF800 - 0x800));
      if (cp >= 0xD800 && cp < 0xE000) cp = 0x4E2D;
    } else cp = 0x10000 + static_cast<std::uint32_t>(rng.below(0x100000));
    if (cp < 0x80) {
      s += static_cast<char>(cp);
    } else if (cp < 0x800) {
      s += static_cast<char>(0xC0 | (cp >> 6));
      s += static_cast<char>(0x80 | (cp & 0x3F));
    } else if (cp < 0x10000) {
      s += static_cast<char>(0xE0 | (cp >> 12));
      s += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
      s += static_cast<char>(0x80 | (cp & 0x3F));
    } else {
      s += static_cast<char>(0xF0 | (cp >> 18));
      s += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
      s += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
      s += static_cast<char>(0x80 | (cp & 0x3F));
    }
  }
  return s;
}

std::vector<std::string> caption_corpus() {
  return {"a photo of a red circle", "breaking: blue square spotted downtown", "this picture shows a green cross",
          "look at the yellow triangle everyone is talking about", "a photo of a blue circle, shocking"};
}

}  // namespace

TEST_CASE("one merge on abab") {
  const BpeVocab v = bpe_train({"abab"}, BpeVocab::kFirstMerge + 1);
  REQUIRE(v.merges().size() == 1);
  CHECK(v.merges()[0] == std::pair<TokenId, TokenId>{'a', 'b'});
  const auto ids = tokenize_ids("abab", v);
  CHECK(ids == std::vector<TokenId>{BpeVocab::kFirstMerge, BpeVocab::kFirstMerge});
  CHECK(v.bytes(BpeVocab::kFirstMerge) == "ab");
}

TEST_CASE("no repeated pair means no merges") {
  const BpeVocab v = bpe_train({"abcdefg"}, 400);
  CHECK(v.merges().empty());
  CHECK(v.size() == BpeVocab::kFirstMerge);
}

TEST_CASE("training is deterministic and ignores corpus order") {
  auto corpus = caption_corpus();
  const BpeVocab a = bpe_train(corpus, 320), b = bpe_train(corpus, 320);
  CHECK(a == b);
  std::reverse(corpus.begin(), corpus.end());
  CHECK(bpe_train(corpus, 320) == a);
  Rng rng(3);
  rng.shuffle(corpus);
  CHECK(bpe_train(corpus, 320) == a);
}

TEST_CASE("empty text gives no tokens") {
  const BpeVocab v = bpe_train(caption_corpus(), 300);
  CHECK(tokenize("", v).ids.empty());
  CHECK(tokenize_ids("", v).empty());
}

TEST_CASE("special ids are fixed") {
  CHECK(special::pad == 256);
  CHECK(special::bos == 257);
  CHECK(special::eos == 258);
  CHECK(special::img_slot == 259);
  CHECK(BpeVocab::is_special(special::txt_close));
  CHECK_FALSE(BpeVocab::is_special(BpeVocab::kFirstMerge));
}

TEST_CASE("detokenize inverts tokenize on 1000 random UTF-8 strings") {
  const BpeVocab v = bpe_train(caption_corpus(), 360);
  Rng rng(2024);
  std::size_t failures = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::string s = random_utf8(rng);
    if (detokenize(tokenize_ids(s, v), v) != s) ++failures;
  }
  CHECK(failures == 0);
}

TEST_CASE("padding never changes earlier ids") {
  const BpeVocab v = bpe_train(caption_corpus(), 320);
  const TokenSequence seq = tokenize("a photo of a red circle", v);
  const TokenSequence p = seq.padded(seq.size() + 7);
  CHECK(std::equal(seq.ids.begin(), seq.ids.end(), p.ids.begin()));
  for (std::size_t i = seq.size(); i < p.size(); ++i) CHECK(p.ids[i] == special::pad);
  CHECK(detokenize(p.ids, v) == "a photo of a red circle");
}

TEST_CASE("tokenize truncates to max_len") {
  const BpeVocab v;
  CHECK(tokenize("abcdefgh", v, 5).ids.size() == 5);
}

TEST_CASE("vocab files round-trip") {
  const BpeVocab v = bpe_train(caption_corpus(), 330);
  CHECK(BpeVocab::parse(v.serialize()) == v);
  const auto dir = mmfn::testing::scratch_dir("vocab");
  v.save(dir / "v.txt");
  CHECK(BpeVocab::load(dir / "v.txt") == v);
  CHECK_THROWS_AS(BpeVocab::parse("not a vocab\n"), DataError);
}

TEST_CASE("embedding lookup") {
  Rng rng(5);
  const Tensor table = mmfn::testing::random_tensor({BpeVocab::kFirstMerge + 4, 6}, rng, 1.0, false);
  TokenSequence seq{{special::pad}, 8};
  const Tensor e = embed_tokens(seq, table);
  for (std::size_t c = 0; c < 6; ++c) CHECK(e.at(0, c) == table.at(special::pad, c));

  const std::vector<TokenId> ids{3, 97, 3, 261, 262};
  const Tensor lookup = embed_tokens(TokenSequence{ids, 8}, table);
  std::vector<double> onehot(ids.size() * table.dim(0), 0.0);
  for (std::size_t i = 0; i < ids.size(); ++i) onehot[i * table.dim(0) + ids[i]] = 1.0;
  const Tensor viamat = matmul(Tensor::from({ids.size(), table.dim(0)}, onehot), table);
  CHECK(mmfn::testing::max_abs_diff(lookup.data(), viamat.data()) < 1e-12);
}

TEST_CASE("duplicate ids sum their gradient contributions") {
  Rng rng(6);
  const TokenSequence seq{{5, 9, 5, 5, 2}, 8};
  auto f = mmfn::testing::readout([&](const Tensor& t) { return embed_tokens(seq, t); }, 7);
  CHECK(grad_check(f, mmfn::testing::random_tensor({12, 4}, rng)) < 1e-6);
}
