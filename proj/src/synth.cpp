#include <array>
#include <cmath>

#include "jessi/text.hpp"

namespace jessi {

namespace {

// Cue phrases are shared across domains; content nouns are not. Inside domain
// A, positives and negatives draw nouns from disjoint halves of the lexicon,
// so a classifier can latch onto nouns instead of cues in-domain. Domain B
// mixes its whole lexicon for both classes.
const std::vector<std::string> kLexiconA = {
    "adapter", "charger", "battery",  "keyboard", "trackpad", "screen",
    "cable",   "speaker", "firmware", "router",   "webcam",   "headset",
    "printer", "monitor", "stylus",   "dock",     "antenna",  "sensor",
    "chipset", "cooler",  "modem",    "tablet",   "mouse",    "drive"};

const std::vector<std::string> kLexiconB = {
    "lobby",    "suite",    "pillow",   "breakfast", "housekeeping", "concierge",
    "spa",      "elevator", "towel",    "minibar",   "balcony",      "reception",
    "bathtub",  "curtain",  "mattress", "bellhop",   "poolside",     "buffet",
    "lounge",   "valet",    "linen",    "hallway",   "keycard",      "skylight"};

// {0}/{1}/{2} are noun slots.
const std::array<const char*, 7> kSuggestionTemplates = {
    "please add {0} support",
    "please make the {0} easier to use",
    "you should include a {0} option",
    "you should offer {0} with every {1}",
    "it would be great if the {0} had a {1}",
    "i suggest adding a {0} to the {1}",
    "it would be great if the {0} worked with the {1} and the {2}",
};

const std::array<const char*, 7> kStatementTemplates = {
    "the {0} works fine",
    "i bought the {0} last week",
    "my {0} stopped working after a day",
    "the {0} and the {1} are okay",
    "we tested the {0} yesterday",
    "this {0} is heavier than my old {1}",
    "the {0} made the {1} and the {2} look identical all day long",
};

std::string fill_template(const char* tmpl, const std::vector<std::string>& lexicon,
                          RngStream& rng) {
  std::string out;
  for (const char* p = tmpl; *p; ++p) {
    if (*p == '{' && p[1] != '\0' && p[2] == '}') {
      out += lexicon[rng.next_below(lexicon.size())];
      p += 2;
    } else {
      out += *p;
    }
  }
  return out;
}

std::vector<RawExample> make_split(const std::string& prefix, std::size_t n, double positive_rate,
                                   Domain domain, RngStream& rng) {
  const auto n_pos = static_cast<std::size_t>(
      std::llround(positive_rate * static_cast<double>(n)));

  std::vector<std::string> noun_pool_pos, noun_pool_neg;
  if (domain == Domain::SourceA) {
    noun_pool_pos.assign(kLexiconA.begin(), kLexiconA.begin() + kLexiconA.size() / 2);
    noun_pool_neg.assign(kLexiconA.begin() + kLexiconA.size() / 2, kLexiconA.end());
  } else {
    noun_pool_pos = kLexiconB;
    noun_pool_neg = kLexiconB;
  }

  std::vector<RawExample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const bool positive = i < n_pos;
    const auto& pool = positive ? noun_pool_pos : noun_pool_neg;
    const auto& templates = positive ? kSuggestionTemplates : kStatementTemplates;
    RawExample ex;
    ex.sentence = fill_template(templates[rng.next_below(templates.size())], pool, rng);
    if (rng.next_uniform() < 0.3) ex.sentence += positive ? "!" : ".";
    ex.label = positive ? 1 : 0;
    ex.domain = domain;
    out.push_back(std::move(ex));
  }
  rng.shuffle(out.begin(), out.end());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i].id = strf("%s-%05zu", prefix.c_str(), i + 1);
  return out;
}

}  // namespace

const std::vector<std::string>& synth_lexicon_a() { return kLexiconA; }
const std::vector<std::string>& synth_lexicon_b() { return kLexiconB; }

SynthCorpus synth_generate(const SynthSpec& spec, RngStream& rng) {
  if (spec.n_train == 0 || spec.n_trial_a == 0 || spec.n_trial_b == 0 || spec.n_test_a == 0 ||
      spec.n_test_b == 0)
    throw ValueError("synth_generate: every split size must be positive");
  if (spec.positive_rate <= 0.0 || spec.positive_rate >= 1.0)
    throw ValueError(strf("synth_generate: positive rate %.3f outside (0,1)", spec.positive_rate));

  SynthCorpus corpus;
  RngStream r_train = rng.split(1);
  RngStream r_trial_a = rng.split(2);
  RngStream r_trial_b = rng.split(3);
  RngStream r_test_a = rng.split(4);
  RngStream r_test_b = rng.split(5);
  corpus.train = make_split("train", spec.n_train, spec.positive_rate, Domain::SourceA, r_train);
  corpus.trial_a =
      make_split("trialA", spec.n_trial_a, spec.positive_rate, Domain::SourceA, r_trial_a);
  corpus.trial_b =
      make_split("trialB", spec.n_trial_b, spec.positive_rate, Domain::TargetB, r_trial_b);
  corpus.test_a = make_split("testA", spec.n_test_a, spec.positive_rate, Domain::SourceA, r_test_a);
  corpus.test_b = make_split("testB", spec.n_test_b, spec.positive_rate, Domain::TargetB, r_test_b);
  return corpus;
}

}  // namespace jessi
