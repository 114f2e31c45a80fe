#include "jessi/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

namespace jessi {

namespace {

bool is_word_char(unsigned char c) { return std::isalnum(c) != 0; }

bool is_numeric_label(const std::string& s) {
  if (s.empty()) return false;
  for (unsigned char c : s)
    if (!std::isdigit(c)) return false;
  return true;
}

std::string lowercase(const std::string& s) {
  std::string out = s;
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

std::vector<std::string> tokenize(const std::string& sentence) {
  const std::string text = lowercase(sentence);
  std::vector<std::string> tokens;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    const unsigned char c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      ++i;
      continue;
    }
    if (is_word_char(c)) {
      std::size_t j = i + 1;
      while (j < n) {
        const unsigned char cj = static_cast<unsigned char>(text[j]);
        if (is_word_char(cj)) {
          ++j;
        } else if ((cj == '\'' || cj == '-') && j + 1 < n &&
                   is_word_char(static_cast<unsigned char>(text[j + 1]))) {
          j += 2;
        } else {
          break;
        }
      }
      tokens.push_back(text.substr(i, j - i));
      i = j;
    } else {
      tokens.push_back(text.substr(i, 1));
      ++i;
    }
  }
  if (tokens.empty()) throw ValueError("tokenize: empty sentence");
  return tokens;
}

Vocab::Vocab() {
  index_to_token_ = {kPadToken, kUnkToken};
  token_to_index_[kPadToken] = kPad;
  token_to_index_[kUnkToken] = kUnk;
}

Vocab::Vocab(std::vector<std::string> tokens_in_index_order) : Vocab() {
  for (auto& tok : tokens_in_index_order) {
    token_to_index_[tok] = static_cast<std::int32_t>(index_to_token_.size());
    index_to_token_.push_back(std::move(tok));
  }
}

std::int32_t Vocab::lookup(const std::string& token) const {
  auto it = token_to_index_.find(token);
  return it == token_to_index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(std::int32_t index) const {
  if (index < 0 || static_cast<std::size_t>(index) >= index_to_token_.size())
    throw ValueError(strf("vocab: index %d out of range", index));
  return index_to_token_[static_cast<std::size_t>(index)];
}

std::vector<std::string> Vocab::entries() const {
  return std::vector<std::string>(index_to_token_.begin() + 2, index_to_token_.end());
}

Vocab build_vocab(const std::vector<std::vector<std::string>>& corpus, std::size_t min_frequency) {
  if (corpus.empty()) throw ValueError("build_vocab: empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const auto& sent : corpus)
    for (const auto& tok : sent) ++counts[tok];

  std::vector<std::pair<std::string, std::size_t>> kept;
  for (const auto& [tok, cnt] : counts)
    if (cnt >= min_frequency) kept.emplace_back(tok, cnt);
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocab v;
  v.min_frequency_ = min_frequency;
  for (auto& [tok, cnt] : kept) {
    (void)cnt;
    v.token_to_index_[tok] = static_cast<std::int32_t>(v.index_to_token_.size());
    v.index_to_token_.push_back(tok);
  }
  return v;
}

// --- CSV -------------------------------------------------------------------

namespace {

struct CsvRow {
  std::vector<std::string> fields;
  std::size_t line;  // 1-based line the row started on
};

std::vector<CsvRow> parse_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(strf("dataset: cannot open %s", path.c_str()));
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  std::vector<CsvRow> rows;
  std::vector<std::string> fields;
  std::string field;
  bool in_quotes = false;
  std::size_t line = 1;
  std::size_t row_start_line = 1;
  bool row_has_content = false;

  auto end_field = [&]() {
    fields.push_back(field);
    field.clear();
  };
  auto end_row = [&]() {
    end_field();
    rows.push_back({fields, row_start_line});
    fields.clear();
    row_has_content = false;
  };

  for (std::size_t i = 0; i < content.size(); ++i) {
    const char c = content[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < content.size() && content[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field += c;
      }
      continue;
    }
    switch (c) {
      case '"':
        if (!field.empty())
          throw ParseError(strf("%s:%zu: stray quote inside unquoted field", path.c_str(), line));
        in_quotes = true;
        row_has_content = true;
        break;
      case ',':
        end_field();
        row_has_content = true;
        break;
      case '\r':
        break;
      case '\n':
        if (row_has_content || !field.empty() || !fields.empty()) end_row();
        ++line;
        row_start_line = line;
        break;
      default:
        field += c;
        row_has_content = true;
        break;
    }
  }
  if (in_quotes) throw ParseError(strf("%s:%zu: unterminated quoted field", path.c_str(), line));
  if (row_has_content || !field.empty() || !fields.empty()) end_row();
  return rows;
}

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"')
      out += "\"\"";
    else
      out += c;
  }
  return out + "\"";
}

}  // namespace

std::vector<RawExample> load_dataset(const std::string& path, Domain domain, bool labeled) {
  const std::vector<CsvRow> rows = parse_csv(path);
  const std::size_t want = labeled ? 3 : 2;

  std::vector<RawExample> out;
  std::size_t start = 0;
  if (!rows.empty()) {
    const auto& first = rows[0];
    if (labeled) {
      if (first.fields.size() == want && !is_numeric_label(first.fields[2])) start = 1;
    } else {
      const std::string head = lowercase(first.fields.empty() ? "" : first.fields[0]);
      if (head == "id") start = 1;
    }
  }
  for (std::size_t r = start; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.fields.size() != want)
      throw ParseError(strf("%s:%zu: expected %zu fields, found %zu", path.c_str(), row.line,
                            want, row.fields.size()));
    RawExample ex;
    ex.id = row.fields[0];
    ex.sentence = row.fields[1];
    ex.domain = domain;
    if (ex.sentence.empty())
      throw ParseError(strf("%s:%zu: empty sentence", path.c_str(), row.line));
    if (labeled) {
      const std::string& lbl = row.fields[2];
      if (lbl == "0")
        ex.label = 0;
      else if (lbl == "1")
        ex.label = 1;
      else
        throw ParseError(strf("%s:%zu: label '%s' is not 0 or 1", path.c_str(), row.line,
                              lbl.c_str()));
    }
    out.push_back(std::move(ex));
  }
  return out;
}

void write_dataset(const std::string& path, const std::vector<RawExample>& examples,
                   bool labeled) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(strf("dataset: cannot open %s for writing", path.c_str()));
  out << (labeled ? "id,sentence,label\n" : "id,sentence\n");
  for (const auto& ex : examples) {
    out << csv_quote(ex.id) << ',' << csv_quote(ex.sentence);
    if (labeled) out << ',' << ex.label;
    out << '\n';
  }
  if (!out) throw IoError(strf("dataset: write failed for %s", path.c_str()));
}

// Shared by the templated load_embeddings (see text.hpp).
std::vector<std::pair<std::string, std::vector<double>>> read_embedding_entries(
    const std::string& path, std::size_t dim) {
  std::ifstream in(path);
  if (!in) throw IoError(strf("embeddings: cannot open %s", path.c_str()));
  std::vector<std::pair<std::string, std::vector<double>>> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream iss(line);
    std::string word;
    iss >> word;
    std::vector<double> vec;
    vec.reserve(dim);
    double v;
    while (iss >> v) vec.push_back(v);
    if (vec.size() != dim)
      throw ParseError(strf("%s:%zu: entry '%s' has %zu values, expected %zu", path.c_str(),
                            lineno, word.c_str(), vec.size(), dim));
    entries.emplace_back(std::move(word), std::move(vec));
  }
  return entries;
}

std::vector<EncodedExample> encode_examples(const std::vector<RawExample>& raws,
                                            const Vocab& vocab) {
  std::vector<EncodedExample> out;
  out.reserve(raws.size());
  for (const auto& raw : raws) {
    EncodedExample enc;
    enc.id = raw.id;
    enc.label = raw.label;
    enc.domain = raw.domain;
    for (const auto& tok : tokenize(raw.sentence)) enc.token_ids.push_back(vocab.lookup(tok));
    enc.length = enc.token_ids.size();
    out.push_back(std::move(enc));
  }
  return out;
}

std::vector<Batch> make_batches(const std::vector<EncodedExample>& examples,
                                std::size_t batch_size, bool shuffle, RngStream& rng) {
  if (batch_size == 0) throw ValueError("make_batches: batch size must be positive");
  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (shuffle) rng.shuffle(order.begin(), order.end());

  std::vector<Batch> batches;
  for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
    const std::size_t end = std::min(begin + batch_size, order.size());
    Batch b;
    b.size = end - begin;
    for (std::size_t i = begin; i < end; ++i)
      b.max_len = std::max(b.max_len, examples[order[i]].length);
    b.token_ids.assign(b.size * b.max_len, Vocab::kPad);
    b.mask.assign(b.size * b.max_len, 0.0f);
    for (std::size_t i = begin; i < end; ++i) {
      const EncodedExample& ex = examples[order[i]];
      const std::size_t row = i - begin;
      for (std::size_t t = 0; t < ex.length; ++t) {
        b.token_ids[row * b.max_len + t] = ex.token_ids[t];
        b.mask[row * b.max_len + t] = 1.0f;
      }
      b.labels.push_back(ex.label);
      b.domains.push_back(static_cast<int>(ex.domain));
      b.lengths.push_back(ex.length);
      b.ids.push_back(ex.id);
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace jessi
