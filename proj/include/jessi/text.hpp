#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "jessi/common.hpp"
#include "jessi/rng.hpp"
#include "jessi/tensor.hpp"

namespace jessi {

// Domain tags for the two-corpus setup: the labeled source domain and the
// unlabeled-at-training target domain.
enum class Domain : int { SourceA = 0, TargetB = 1 };

inline const char* domain_name(Domain d) { return d == Domain::SourceA ? "A" : "B"; }

struct RawExample {
  std::string id;
  std::string sentence;
  int label = -1;  // 1 = suggestion, 0 = not, -1 = unlabeled
  Domain domain = Domain::SourceA;

  bool operator==(const RawExample&) const = default;
};

// Lowercase tokens. Rules: maximal runs of letters/digits, keeping apostrophes
// and hyphens that sit between two alphanumerics; any other non-whitespace
// character is its own single-character token.
std::vector<std::string> tokenize(const std::string& sentence);

class Vocab {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kUnk = 1;
  static constexpr const char* kPadToken = "<pad>";
  static constexpr const char* kUnkToken = "<unk>";

  Vocab();
  explicit Vocab(std::vector<std::string> tokens_in_index_order);  // entries from index 2 on

  std::int32_t lookup(const std::string& token) const;
  const std::string& token(std::int32_t index) const;
  std::size_t size() const { return index_to_token_.size(); }
  std::size_t min_frequency() const { return min_frequency_; }

  // Tokens with index >= 2, in index order (for serialization).
  std::vector<std::string> entries() const;

  friend Vocab build_vocab(const std::vector<std::vector<std::string>>& corpus,
                           std::size_t min_frequency);

 private:
  std::unordered_map<std::string, std::int32_t> token_to_index_;
  std::vector<std::string> index_to_token_;
  std::size_t min_frequency_ = 1;
};

// Frequency-ordered vocabulary (descending count, ties lexicographic); tokens
// below min_frequency map to UNK.
Vocab build_vocab(const std::vector<std::vector<std::string>>& corpus, std::size_t min_frequency);

// CSV rows `id,sentence[,label]`, double-quote quoting with doubled-quote
// escapes; an optional header is detected by a non-numeric label field (or a
// literal leading "id" field when unlabeled).
std::vector<RawExample> load_dataset(const std::string& path, Domain domain, bool labeled);
void write_dataset(const std::string& path, const std::vector<RawExample>& examples, bool labeled);

// Two static embedding tables looked up jointly; a lookup concatenates the
// matching rows of both into a (d_g + d_c)-vector.
template <typename Real>
struct EmbeddingPair {
  Tensor<Real> table_g;
  Tensor<Real> table_c;
  bool trainable_g = true;
  bool trainable_c = true;

  std::size_t dim() const { return table_g.shape[1] + table_c.shape[1]; }
};

std::vector<std::pair<std::string, std::vector<double>>> read_embedding_entries(
    const std::string& path, std::size_t dim);

// Text format, one entry per line: `word v1 v2 ... vdim`. Vocab rows present
// in the file are copied; everything else is drawn uniform in [-0.25, 0.25]
// from the given stream, except PAD which stays zero. An empty path skips the
// file and leaves the table fully random-initialized.
template <typename Real>
Tensor<Real> load_embeddings(const std::string& path, const Vocab& vocab, std::size_t dim,
                             RngStream& rng) {
  Tensor<Real> table({vocab.size(), dim});
  // PAD row stays zero; draw order is fixed so file content cannot shift it
  for (std::size_t row = 1; row < vocab.size(); ++row)
    for (std::size_t j = 0; j < dim; ++j)
      table.data[row * dim + j] = static_cast<Real>(rng.uniform(-0.25, 0.25));
  if (!path.empty()) {
    for (const auto& [word, vec] : read_embedding_entries(path, dim)) {
      const std::int32_t idx = vocab.lookup(word);
      if (idx == Vocab::kPad) continue;
      if (idx == Vocab::kUnk && word != Vocab::kUnkToken) continue;  // not in vocab
      for (std::size_t j = 0; j < dim; ++j)
        table.data[static_cast<std::size_t>(idx) * dim + j] = static_cast<Real>(vec[j]);
    }
  }
  return table;
}

struct EncodedExample {
  std::string id;
  std::vector<std::int32_t> token_ids;
  int label = -1;
  Domain domain = Domain::SourceA;
  std::size_t length = 0;
};

std::vector<EncodedExample> encode_examples(const std::vector<RawExample>& raws,
                                            const Vocab& vocab);

struct Batch {
  std::size_t size = 0;     // B
  std::size_t max_len = 0;  // T
  std::vector<std::int32_t> token_ids;  // B*T, PAD-filled
  std::vector<float> mask;              // B*T, lengths[i] leading ones per row
  std::vector<int> labels;              // -1 where unlabeled
  std::vector<int> domains;
  std::vector<std::size_t> lengths;
  std::vector<std::string> ids;

  template <typename Real>
  Tensor<Real> mask_tensor() const {
    Tensor<Real> m({size, max_len});
    for (std::size_t i = 0; i < mask.size(); ++i) m.data[i] = static_cast<Real>(mask[i]);
    return m;
  }
};

// Every example appears exactly once; the last batch may be short. With
// shuffle the order is a deterministic function of the stream.
std::vector<Batch> make_batches(const std::vector<EncodedExample>& examples,
                                std::size_t batch_size, bool shuffle, RngStream& rng);

// --- synthetic two-domain corpus ------------------------------------------

struct SynthSpec {
  std::size_t n_train = 2000;
  std::size_t n_trial_a = 250;
  std::size_t n_trial_b = 250;
  std::size_t n_test_a = 400;
  std::size_t n_test_b = 400;
  double positive_rate = 0.5;
};

struct SynthCorpus {
  std::vector<RawExample> train;    // domain A, labeled
  std::vector<RawExample> trial_a;  // domain A, labeled
  std::vector<RawExample> trial_b;  // domain B, labeled
  std::vector<RawExample> test_a;
  std::vector<RawExample> test_b;
};

// Suggestion sentences come from imperative cue templates shared across
// domains; content nouns come from per-domain disjoint lexicons. Inside
// domain A the noun pools additionally split by label, which is the
// domain-specific shortcut the adversarial module is supposed to suppress.
SynthCorpus synth_generate(const SynthSpec& spec, RngStream& rng);

const std::vector<std::string>& synth_lexicon_a();
const std::vector<std::string>& synth_lexicon_b();

}  // namespace jessi
