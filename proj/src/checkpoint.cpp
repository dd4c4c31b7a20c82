#include "mmfn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mmfn/errors.hpp"
#include "mmfn/rng.hpp"

namespace mmfn {

using nlohmann::json;

namespace {

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

json header_to_json(const CheckpointHeader& h) {
  json tensors = json::array();
  for (const auto& t : h.tensors)
    tensors.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", t.offset}, {"count", t.count}});
  return {{"format_version", h.format_version},
          {"config", h.config},
          {"vocab", h.vocab},
          {"metadata", h.metadata},
          {"tensors", tensors},
          {"payload_bytes", h.payload_bytes},
          {"checksum", h.checksum}};
}

CheckpointHeader header_from_json(const json& j) {
  CheckpointHeader h;
  try {
    h.format_version = j.at("format_version").get<int>();
    if (h.format_version != kCheckpointVersion)
      throw CorruptCheckpointError("unsupported checkpoint version " + std::to_string(h.format_version) +
                                   " (expected " + std::to_string(kCheckpointVersion) + ")");
    h.config = j.at("config").get<std::string>();
    h.vocab = j.at("vocab").get<std::string>();
    h.metadata = j.at("metadata").get<std::map<std::string, std::string>>();
    for (const auto& t : j.at("tensors"))
      h.tensors.push_back({t.at("name").get<std::string>(), t.at("shape").get<Shape>(),
                           t.at("offset").get<std::uint64_t>(), t.at("count").get<std::uint64_t>()});
    h.payload_bytes = j.at("payload_bytes").get<std::uint64_t>();
    h.checksum = j.at("checksum").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw CorruptCheckpointError(std::string("checkpoint header: ") + e.what());
  }
  // The manifest must tile the payload exactly.
  std::uint64_t next = 0;
  for (const auto& t : h.tensors) {
    if (t.offset != next || t.count != shape_numel(t.shape))
      throw CorruptCheckpointError("checkpoint manifest entry '" + t.name + "' does not continue the payload");
    next += t.count;
  }
  if (next * 8 != h.payload_bytes)
    throw CorruptCheckpointError("checkpoint manifest covers " + std::to_string(next * 8) + " bytes, header says " +
                                 std::to_string(h.payload_bytes));
  return h;
}

// Returns the header and the offset of the payload.
std::pair<CheckpointHeader, std::size_t> parse_prefix(std::string_view bytes) {
  const std::size_t m = kCheckpointMagic.size();
  if (bytes.size() < m + 8 || bytes.substr(0, m) != kCheckpointMagic)
    throw CorruptCheckpointError("not a checkpoint: bad magic");
  const std::uint64_t hlen = get_u64(reinterpret_cast<const unsigned char*>(bytes.data() + m));
  if (hlen > bytes.size() - m - 8) throw CorruptCheckpointError("checkpoint header truncated");
  json j;
  try {
    j = json::parse(bytes.substr(m + 8, hlen));
  } catch (const json::exception& e) {
    throw CorruptCheckpointError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  return {header_from_json(j), m + 8 + static_cast<std::size_t>(hlen)};
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read checkpoint " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

const TensorEntry* CheckpointHeader::find(std::string_view name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

const std::vector<double>& Checkpoint::tensor(std::string_view name) const {
  for (std::size_t i = 0; i < header.tensors.size(); ++i)
    if (header.tensors[i].name == name) return values[i];
  throw CompatibilityError("checkpoint has no tensor '" + std::string(name) + "'");
}

std::string encode_checkpoint(CheckpointHeader header, const ParamList& params) {
  std::string payload;
  header.tensors.clear();
  std::uint64_t offset = 0;
  for (const auto& p : params) {
    if (header.find(p.name)) throw ContractError("checkpoint: duplicate tensor name '" + p.name + "'");
    const auto data = p.tensor.data();
    header.tensors.push_back({p.name, p.tensor.shape(), offset, data.size()});
    offset += data.size();
    for (double v : data) put_u64(payload, std::bit_cast<std::uint64_t>(v));
  }
  header.format_version = kCheckpointVersion;
  header.payload_bytes = payload.size();
  header.checksum = fnv1a64(payload);
  const std::string head = header_to_json(header).dump();
  std::string out(kCheckpointMagic);
  put_u64(out, head.size());
  out += head;
  out += payload;
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  auto [header, start] = parse_prefix(bytes);
  const std::string_view payload = bytes.substr(start);
  if (payload.size() != header.payload_bytes)
    throw CorruptCheckpointError("checkpoint payload is " + std::to_string(payload.size()) + " bytes, header says " +
                                 std::to_string(header.payload_bytes));
  if (fnv1a64(payload) != header.checksum) throw CorruptCheckpointError("checkpoint payload checksum mismatch");
  Checkpoint ck;
  const auto* p = reinterpret_cast<const unsigned char*>(payload.data());
  for (const auto& t : header.tensors) {
    std::vector<double> v(t.count);
    for (std::size_t i = 0; i < t.count; ++i) v[i] = std::bit_cast<double>(get_u64(p + 8 * (t.offset + i)));
    ck.values.push_back(std::move(v));
  }
  ck.header = std::move(header);
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const CheckpointHeader& header, const ParamList& params) {
  const std::string bytes = encode_checkpoint(header, params);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read checkpoint " + path.string());
  const std::size_t m = kCheckpointMagic.size();
  std::string prefix(m + 8, '\0');
  is.read(prefix.data(), static_cast<std::streamsize>(prefix.size()));
  if (static_cast<std::size_t>(is.gcount()) != prefix.size() || prefix.substr(0, m) != kCheckpointMagic)
    throw CorruptCheckpointError("not a checkpoint: bad magic");
  const std::uint64_t hlen = get_u64(reinterpret_cast<const unsigned char*>(prefix.data() + m));
  if (hlen > (std::uint64_t{1} << 32)) throw CorruptCheckpointError("checkpoint header length implausible");
  std::string head(hlen, '\0');
  is.read(head.data(), static_cast<std::streamsize>(hlen));
  if (static_cast<std::uint64_t>(is.gcount()) != hlen) throw CorruptCheckpointError("checkpoint header truncated");
  return parse_prefix(prefix + head).first;
}

void restore_params(const Checkpoint& ckpt, const ParamList& params) {
  for (const auto& p : params) {
    const TensorEntry* e = ckpt.header.find(p.name);
    if (!e) throw CompatibilityError("checkpoint lacks tensor '" + p.name + "'");
    if (e->shape != p.tensor.shape())
      throw CompatibilityError("tensor '" + p.name + "' has shape " + shape_str(e->shape) + " in the checkpoint but " +
                               shape_str(p.tensor.shape()) + " in the model");
  }
  if (ckpt.header.tensors.size() != params.size()) {
    for (const auto& e : ckpt.header.tensors) {
      bool found = false;
      for (const auto& p : params) found = found || p.name == e.name;
      if (!found) throw CompatibilityError("checkpoint tensor '" + e.name + "' has no counterpart in the model");
    }
  }
  for (const auto& p : params) {
    Tensor t = p.tensor;
    const auto& v = ckpt.tensor(p.name);
    std::copy(v.begin(), v.end(), t.mutable_data().begin());
  }
}

}  // namespace mmfn
