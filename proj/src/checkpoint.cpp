#include "plscore/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "plscore/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

namespace plscore {

namespace {

constexpr char kMagic[4] = {'P', 'L', 'S', 'C'};
constexpr std::uint16_t kVersion = 1;

std::array<std::uint32_t, 256> make_crc_table() {
  std::array<std::uint32_t, 256> table{};
  for (std::uint32_t i = 0; i < 256; ++i) {
    std::uint32_t c = i;
    for (int k = 0; k < 8; ++k)
      c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
    table[i] = c;
  }
  return table;
}

void append(std::string& buf, const void* p, std::size_t n) {
  buf.append(static_cast<const char*>(p), n);
}

nlohmann::json config_to_json(const ModelConfig& c) {
  return nlohmann::json{{"vocab_size", c.vocab_size}, {"layers", c.layers},
                        {"heads", c.heads},           {"hidden", c.hidden},
                        {"ffn", c.ffn},               {"max_len", c.max_len},
                        {"causal", c.causal},         {"dropout", c.dropout},
                        {"lowercase", c.lowercase}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.layers = j.at("layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.ffn = j.at("ffn").get<int>();
  c.max_len = j.at("max_len").get<int>();
  c.causal = j.at("causal").get<bool>();
  c.dropout = j.at("dropout").get<double>();
  c.lowercase = j.at("lowercase").get<bool>();
  return c;
}

}  // namespace

std::uint32_t crc32(const unsigned char* data, std::size_t len) {
  static const auto table = make_crc_table();
  std::uint32_t c = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < len; ++i)
    c = table[(c ^ data[i]) & 0xFFu] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

void save_checkpoint(const Model& model, const Vocab& vocab,
                     const std::string& path) {
  nlohmann::json meta;
  meta["config"] = config_to_json(model.config());
  meta["has_head"] = model.has_head();
  meta["vocab"] = nlohmann::json::parse(vocab.to_json_string());
  std::string json = meta.dump();

  std::string buf;
  append(buf, kMagic, 4);
  append(buf, &kVersion, 2);
  std::uint32_t jlen = static_cast<std::uint32_t>(json.size());
  append(buf, &jlen, 4);
  buf += json;
  for (const auto& p : model.params()) {
    std::vector<float> f(p.t.data.size());
    for (std::size_t i = 0; i < f.size(); ++i)
      f[i] = static_cast<float>(p.t.data[i]);
    append(buf, f.data(), f.size() * sizeof(float));
  }
  std::uint32_t crc =
      crc32(reinterpret_cast<const unsigned char*>(buf.data()), buf.size());
  append(buf, &crc, 4);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("checkpoint: cannot write " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw ParseError("checkpoint: write failed for " + path);
}

std::pair<Model, Vocab> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("checkpoint: cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  std::string buf = ss.str();
  if (buf.size() < 14 || std::memcmp(buf.data(), kMagic, 4) != 0)
    throw ParseError("checkpoint: bad magic in " + path);
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, buf.data() + buf.size() - 4, 4);
  std::uint32_t actual = crc32(
      reinterpret_cast<const unsigned char*>(buf.data()), buf.size() - 4);
  if (stored_crc != actual)
    throw ParseError("checkpoint: CRC mismatch in " + path);
  std::uint16_t version;
  std::memcpy(&version, buf.data() + 4, 2);
  if (version != kVersion)
    throw ParseError("checkpoint: unsupported format version " +
                     std::to_string(version));
  std::uint32_t jlen;
  std::memcpy(&jlen, buf.data() + 6, 4);
  if (10 + jlen + 4 > buf.size())
    throw ParseError("checkpoint: truncated JSON block in " + path);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(buf.substr(10, jlen));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint: invalid JSON block: ") +
                     e.what());
  }
  ModelConfig config = config_from_json(meta.at("config"));
  Vocab vocab = Vocab::from_json_string(meta.at("vocab").dump());
  Model model(config, 0);
  if (meta.value("has_head", false)) model.add_head();

  std::size_t off = 10 + jlen;
  for (auto& p : model.params()) {
    std::size_t bytes = p.t.data.size() * sizeof(float);
    if (off + bytes + 4 > buf.size())
      throw ParseError("checkpoint: truncated parameter data in " + path);
    std::vector<float> f(p.t.data.size());
    std::memcpy(f.data(), buf.data() + off, bytes);
    for (std::size_t i = 0; i < f.size(); ++i)
      p.t.data[i] = static_cast<double>(f[i]);
    off += bytes;
  }
  if (off + 4 != buf.size())
    throw ParseError("checkpoint: trailing bytes in " + path);
  return {std::move(model), std::move(vocab)};
}

}  // namespace plscore
