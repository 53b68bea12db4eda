#include "plscore/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

namespace plscore {

namespace {

const char* kReservedNames[Vocab::kNumReserved] = {
    "[PAD]", "[UNK]", "[MASK]", "[CLS]", "[SEP]", "[BOS]", "[EOS]"};

std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

// UTF-8 characters, one token each; a space stays a token of its own.
std::vector<std::string> split_chars(const std::string& s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  bool prev_space = false;
  while (i < s.size()) {
    unsigned char c = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    if ((c & 0x80) == 0) len = 1;
    else if ((c & 0xE0) == 0xC0) len = 2;
    else if ((c & 0xF0) == 0xE0) len = 3;
    else if ((c & 0xF8) == 0xF0) len = 4;
    if (i + len > s.size()) len = 1;
    std::string ch = s.substr(i, len);
    if (ch == " " || ch == "\t") {
      if (!prev_space && !out.empty()) out.push_back(" ");
      prev_space = true;
    } else {
      out.push_back(ch);
      prev_space = false;
    }
    i += len;
  }
  while (!out.empty() && out.back() == " ") out.pop_back();
  return out;
}

}  // namespace

std::string normalize_text(const std::string& raw, bool lowercase) {
  std::string out;
  bool in_space = true;  // drop leading whitespace
  for (char ch : raw) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      in_space = true;
      continue;
    }
    if (in_space && !out.empty()) out.push_back(' ');
    in_space = false;
    out.push_back(lowercase ? static_cast<char>(std::tolower(
                                  static_cast<unsigned char>(ch)))
                            : ch);
  }
  return out;
}

long count_words(const std::string& raw) {
  return static_cast<long>(split_words(raw).size());
}

void Vocab::add_token(const std::string& tok) {
  tok_to_id_[tok] = static_cast<int>(id_to_tok_.size());
  id_to_tok_.push_back(tok);
}

Vocab Vocab::build(const std::vector<std::string>& lines, int min_count,
                   Mode mode) {
  bool any = false;
  for (const auto& l : lines)
    if (!normalize_text(l).empty()) any = true;
  if (!any) throw ParseError("build_vocab: empty corpus");

  Vocab v;
  v.mode_ = mode;
  for (const char* name : kReservedNames) v.add_token(name);

  // std::map gives the lexicographic half of the ordering for free.
  std::map<std::string, long> counts;
  for (const auto& line : lines) {
    std::string norm = normalize_text(line);
    for (const auto& tok : v.tokenize(norm)) counts[tok] += 1;
  }
  std::vector<std::pair<std::string, long>> entries(counts.begin(),
                                                    counts.end());
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) {
                     return a.second > b.second;
                   });
  for (const auto& [tok, cnt] : entries)
    if (cnt >= min_count) v.add_token(tok);
  return v;
}

int Vocab::id(const std::string& tok) const {
  auto it = tok_to_id_.find(tok);
  return it == tok_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size())
    throw ContractError("Vocab::token: id out of range: " + std::to_string(id));
  return id_to_tok_[static_cast<std::size_t>(id)];
}

std::vector<std::string> Vocab::tokenize(const std::string& raw) const {
  return mode_ == Mode::Word ? split_words(raw) : split_chars(raw);
}

std::string Vocab::to_json_string() const {
  nlohmann::json j;
  j["version"] = 1;
  j["mode"] = mode_ == Mode::Word ? "word" : "char";
  j["reserved"] = nlohmann::json::array();
  for (int i = 0; i < kNumReserved; ++i) j["reserved"].push_back(id_to_tok_[i]);
  j["tokens"] = nlohmann::json::array();
  for (int i = kNumReserved; i < size(); ++i) j["tokens"].push_back(id_to_tok_[i]);
  return j.dump(2) + "\n";
}

Vocab Vocab::from_json_string(const std::string& s) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(s);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("vocab: invalid JSON: ") + e.what());
  }
  if (!j.contains("version") || j["version"] != 1)
    throw ParseError("vocab: unsupported version");
  Vocab v;
  v.mode_ = j.value("mode", "word") == "char" ? Mode::Char : Mode::Word;
  auto reserved = j.at("reserved");
  if (reserved.size() != kNumReserved)
    throw ParseError("vocab: reserved block must hold " +
                     std::to_string(kNumReserved) + " tokens");
  for (const auto& tok : reserved) v.add_token(tok.get<std::string>());
  for (const auto& tok : j.at("tokens")) v.add_token(tok.get<std::string>());
  return v;
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("vocab: cannot write " + path);
  out << to_json_string();
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("vocab: cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_string(ss.str());
}

Sentence encode(const Vocab& vocab, const std::string& raw, Framing framing,
                bool lowercase, long* unk_count) {
  Sentence s;
  s.raw = normalize_text(raw, lowercase);
  s.framing = framing;
  for (const auto& tok : vocab.tokenize(s.raw)) {
    int id = vocab.id(tok);
    if (id == Vocab::kUnk && unk_count) ++*unk_count;
    s.tokens.push_back(id);
  }
  return s;
}

std::string decode(const Vocab& vocab, const Sentence& s) {
  std::string out;
  for (std::size_t i = 0; i < s.tokens.size(); ++i) {
    if (vocab.mode() == Vocab::Mode::Word && i) out += " ";
    out += vocab.token(s.tokens[i]);
  }
  return out;
}

std::vector<int> framed_ids(const Sentence& s) {
  std::vector<int> ids;
  ids.reserve(s.tokens.size() + 2);
  switch (s.framing) {
    case Framing::Mlm:
      ids.push_back(Vocab::kCls);
      ids.insert(ids.end(), s.tokens.begin(), s.tokens.end());
      ids.push_back(Vocab::kSep);
      break;
    case Framing::Causal:
      ids.push_back(Vocab::kBos);
      ids.insert(ids.end(), s.tokens.begin(), s.tokens.end());
      ids.push_back(Vocab::kEos);
      break;
    case Framing::None:
      ids = s.tokens;
      break;
  }
  return ids;
}

std::string append_period(const std::string& raw) {
  if (raw.empty()) return ".";
  if (raw.back() == '.') return raw;
  return raw + " .";
}

std::vector<std::string> load_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot read " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

Corpus make_corpus(const Vocab& vocab, const std::vector<std::string>& lines,
                   Framing framing, bool lowercase, long* unk_count) {
  Corpus c;
  for (const auto& line : lines) {
    if (normalize_text(line).empty()) continue;
    Sentence s = encode(vocab, line, framing, lowercase, unk_count);
    c.n_tok += s.length();
    c.n_word += count_words(s.raw);
    c.sentences.push_back(std::move(s));
  }
  return c;
}

}  // namespace plscore
