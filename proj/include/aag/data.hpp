#pragma once

#include "aag/common.hpp"

#include <map>
#include <string>
#include <vector>

namespace aag {

using TokenSequence = std::vector<int>;

// Reserved token ids, fixed across every vocabulary.
constexpr int kPadId = 0;
constexpr int kBosId = 1;
constexpr int kEosId = 2;
constexpr int kUnkId = 3;
constexpr int kSepId = 4;

class Vocab {
  public:
    Vocab();

    // Adds a word if absent, returns its id.
    int add(const std::string& word);
    // Id lookup; unknown words map to kUnkId.
    int id(const std::string& word) const;
    bool contains(const std::string& word) const;
    const std::string& word(int id) const;
    int size() const { return static_cast<int>(words_.size()); }

    std::vector<std::string> words() const { return words_; }

  private:
    std::map<std::string, int> index_;
    std::vector<std::string> words_;
};

TokenSequence tokenize(const std::string& text, const Vocab& vocab);
std::string detokenize(const TokenSequence& seq, const Vocab& vocab);

struct QaInstance {
    std::string id;
    std::string question;
    std::vector<std::string> answers;
    std::string gold_doc;
    std::vector<std::string> distractor_docs;
};

struct WorldSpec {
    int n_entities = 60;
    int n_attributes = 5;
    int n_distractor_docs = 9;
    int facts_per_doc = 20;
    uint64_t seed = 1;
    // Entities reserved for test questions whose facts never appear in any
    // train-split document ("unseen" sub-split).
    int n_unseen_entities = 10;
    // Attributes per train-world entity held out of train/dev questions;
    // their facts still occur in train docs ("memorized" sub-split).
    int held_out_attrs_per_entity = 1;
    int n_dev = 25;

    void validate() const;
};

struct World {
    WorldSpec spec;
    Vocab vocab;
    std::vector<QaInstance> train;
    std::vector<QaInstance> dev;
    std::vector<QaInstance> test;
};

World gen_world(const WorldSpec& spec);

std::vector<QaInstance> read_dataset(const std::string& path);
void write_dataset(const std::string& path,
                   const std::vector<QaInstance>& instances);

// Rebuilds the closed-world vocabulary from dataset text, in first-seen
// order. The generating and reading sides agree because both walk instances
// in file order.
Vocab vocab_from_instances(const std::vector<QaInstance>& instances);

}  // namespace aag
