#include "aag/data.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <sstream>

namespace aag {

namespace {

using nlohmann::json;

const std::vector<std::string>& attribute_pool() {
    static const std::vector<std::string> pool = {
        "color",   "size",   "shape", "material", "origin", "owner",
        "texture", "weight", "style", "rating",   "smell",  "sound",
        "taste",   "age",    "brand", "price"};
    return pool;
}

const std::vector<std::string>& value_pool() {
    static const std::vector<std::string> pool = {
        "red",   "blue",   "green", "gold",  "black", "white",
        "round", "square", "flat",  "small", "large", "heavy",
        "light", "wood",   "metal", "glass", "stone", "silk",
        "north", "south",  "east",  "west",  "alice", "bob",
        "carol", "dave",   "erin",  "frank", "grace", "heidi"};
    return pool;
}

std::string entity_name(int i) { return "obj" + std::to_string(i); }

std::string fact_text(const std::string& attr, const std::string& entity,
                      const std::string& value) {
    return "the " + attr + " of " + entity + " is " + value + " .";
}

std::string question_text(const std::string& attr, const std::string& entity) {
    return "what is the " + attr + " of " + entity;
}

std::string zero_pad(int n, int width) {
    std::string s = std::to_string(n);
    while (static_cast<int>(s.size()) < width) {
        s.insert(s.begin(), '0');
    }
    return s;
}

}  // namespace

Vocab::Vocab() {
    add("<pad>");
    add("<bos>");
    add("<eos>");
    add("<unk>");
    add("<sep>");
}

int Vocab::add(const std::string& word) {
    auto it = index_.find(word);
    if (it != index_.end()) {
        return it->second;
    }
    const int id = static_cast<int>(words_.size());
    index_.emplace(word, id);
    words_.push_back(word);
    return id;
}

int Vocab::id(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? kUnkId : it->second;
}

bool Vocab::contains(const std::string& word) const {
    return index_.count(word) > 0;
}

const std::string& Vocab::word(int id) const {
    if (id < 0 || id >= static_cast<int>(words_.size())) {
        throw DataError("token id out of vocabulary range: " +
                        std::to_string(id));
    }
    return words_[static_cast<size_t>(id)];
}

TokenSequence tokenize(const std::string& text, const Vocab& vocab) {
    TokenSequence out;
    std::istringstream is(text);
    std::string w;
    while (is >> w) {
        out.push_back(vocab.id(w));
    }
    return out;
}

std::string detokenize(const TokenSequence& seq, const Vocab& vocab) {
    std::string out;
    for (size_t i = 0; i < seq.size(); ++i) {
        if (i > 0) {
            out += ' ';
        }
        out += vocab.word(seq[i]);
    }
    return out;
}

void WorldSpec::validate() const {
    if (n_entities < 1 || n_attributes < 1 || n_distractor_docs < 1 ||
        facts_per_doc < 1) {
        throw ConfigError("world spec counts must all be >= 1");
    }
    if (n_attributes > static_cast<int>(attribute_pool().size())) {
        throw ConfigError("n_attributes exceeds the attribute lexicon (" +
                          std::to_string(attribute_pool().size()) + ")");
    }
    if (n_unseen_entities < 0 || n_unseen_entities >= n_entities) {
        throw ConfigError("n_unseen_entities must be in [0, n_entities)");
    }
    if (held_out_attrs_per_entity < 0 ||
        held_out_attrs_per_entity >= n_attributes) {
        throw ConfigError(
            "held_out_attrs_per_entity must be in [0, n_attributes)");
    }
    if (n_entities < 2) {
        throw ConfigError("need at least 2 entities for distractors");
    }
    const int train_world = n_entities - n_unseen_entities;
    const int pool = train_world * (n_attributes - held_out_attrs_per_entity);
    if (n_dev < 0 || n_dev >= pool) {
        throw ConfigError("world too small for requested dev split (pool " +
                          std::to_string(pool) + ", dev " +
                          std::to_string(n_dev) + ")");
    }
}

World gen_world(const WorldSpec& spec) {
    spec.validate();
    Rng rng(derive_seed(spec.seed, "world"));

    World world;
    world.spec = spec;

    const int n_ent = spec.n_entities;
    const int n_attr = spec.n_attributes;
    const int train_world = n_ent - spec.n_unseen_entities;

    // Fixed vocabulary order: reserved, function words, prompt words,
    // attributes, entities, then the full value lexicon.
    for (const std::string& w :
         {"what", "is", "the", "of", ".", "imagine", "context", ":"}) {
        world.vocab.add(w);
    }
    for (int a = 0; a < n_attr; ++a) {
        world.vocab.add(attribute_pool()[static_cast<size_t>(a)]);
    }
    for (int e = 0; e < n_ent; ++e) {
        world.vocab.add(entity_name(e));
    }
    for (const std::string& v : value_pool()) {
        world.vocab.add(v);
    }

    // Closed-world fact table.
    std::vector<std::vector<std::string>> value(
        static_cast<size_t>(n_ent),
        std::vector<std::string>(static_cast<size_t>(n_attr)));
    for (int e = 0; e < n_ent; ++e) {
        for (int a = 0; a < n_attr; ++a) {
            value[static_cast<size_t>(e)][static_cast<size_t>(a)] =
                value_pool()[static_cast<size_t>(
                    rng.uniform_int(static_cast<int>(value_pool().size())))];
        }
    }

    // Question pair assignment. Held-out attrs of train-world entities form
    // the memorized test sub-split; unseen entities form the unseen one.
    struct Pair {
        int e;
        int a;
    };
    std::vector<Pair> train_dev_pool;
    std::vector<Pair> test_mem;
    std::vector<Pair> test_unseen;
    for (int e = 0; e < train_world; ++e) {
        std::vector<int> attrs(static_cast<size_t>(n_attr));
        for (int a = 0; a < n_attr; ++a) {
            attrs[static_cast<size_t>(a)] = a;
        }
        rng.shuffle(attrs);
        for (int i = 0; i < n_attr; ++i) {
            if (i < spec.held_out_attrs_per_entity) {
                test_mem.push_back({e, attrs[static_cast<size_t>(i)]});
            } else {
                train_dev_pool.push_back({e, attrs[static_cast<size_t>(i)]});
            }
        }
    }
    for (int e = train_world; e < n_ent; ++e) {
        for (int a = 0; a < n_attr; ++a) {
            test_unseen.push_back({e, a});
        }
    }
    rng.shuffle(train_dev_pool);
    std::vector<Pair> dev_pairs(train_dev_pool.begin(),
                                train_dev_pool.begin() + spec.n_dev);
    std::vector<Pair> train_pairs(train_dev_pool.begin() + spec.n_dev,
                                  train_dev_pool.end());

    // Documents for train/dev instances only mention train-world entities so
    // the unseen pool stays truly unseen.
    auto make_instance = [&](const Pair& p, const std::string& id,
                             bool restrict_to_train_world) {
        QaInstance inst;
        inst.id = id;
        const std::string& attr = attribute_pool()[static_cast<size_t>(p.a)];
        const std::string entity = entity_name(p.e);
        const std::string& ans =
            value[static_cast<size_t>(p.e)][static_cast<size_t>(p.a)];
        inst.question = question_text(attr, entity);
        inst.answers = {ans};

        const int ent_limit = restrict_to_train_world ? train_world : n_ent;

        // Gold doc: the entity profile first (shuffled), then filler facts
        // about other entities.
        std::vector<int> profile_attrs;
        profile_attrs.push_back(p.a);
        {
            std::vector<int> others;
            for (int a = 0; a < n_attr; ++a) {
                if (a != p.a) {
                    others.push_back(a);
                }
            }
            rng.shuffle(others);
            for (int a : others) {
                if (static_cast<int>(profile_attrs.size()) <
                    std::min(n_attr, spec.facts_per_doc)) {
                    profile_attrs.push_back(a);
                }
            }
        }
        rng.shuffle(profile_attrs);
        std::vector<std::string> facts;
        for (int a : profile_attrs) {
            facts.push_back(fact_text(
                attribute_pool()[static_cast<size_t>(a)], entity,
                value[static_cast<size_t>(p.e)][static_cast<size_t>(a)]));
        }
        while (static_cast<int>(facts.size()) < spec.facts_per_doc) {
            const int fe = rng.uniform_int(ent_limit);
            if (fe == p.e) {
                continue;
            }
            const int fa = rng.uniform_int(n_attr);
            facts.push_back(fact_text(
                attribute_pool()[static_cast<size_t>(fa)], entity_name(fe),
                value[static_cast<size_t>(fe)][static_cast<size_t>(fa)]));
        }
        std::string gold;
        for (size_t i = 0; i < facts.size(); ++i) {
            if (i > 0) {
                gold += ' ';
            }
            gold += facts[i];
        }
        inst.gold_doc = gold;

        // Distractor docs: one fact each, never about the question entity.
        for (int d = 0; d < spec.n_distractor_docs; ++d) {
            int fe = rng.uniform_int(ent_limit);
            while (fe == p.e) {
                fe = rng.uniform_int(ent_limit);
            }
            const int fa = rng.uniform_int(n_attr);
            inst.distractor_docs.push_back(fact_text(
                attribute_pool()[static_cast<size_t>(fa)], entity_name(fe),
                value[static_cast<size_t>(fe)][static_cast<size_t>(fa)]));
        }
        return inst;
    };

    for (size_t i = 0; i < train_pairs.size(); ++i) {
        world.train.push_back(make_instance(
            train_pairs[i], "train-" + zero_pad(static_cast<int>(i), 4),
            true));
    }
    for (size_t i = 0; i < dev_pairs.size(); ++i) {
        world.dev.push_back(make_instance(
            dev_pairs[i], "dev-" + zero_pad(static_cast<int>(i), 4), true));
    }
    for (size_t i = 0; i < test_mem.size(); ++i) {
        world.test.push_back(make_instance(
            test_mem[i], "test-mem-" + zero_pad(static_cast<int>(i), 4),
            false));
    }
    for (size_t i = 0; i < test_unseen.size(); ++i) {
        world.test.push_back(make_instance(
            test_unseen[i], "test-unseen-" + zero_pad(static_cast<int>(i), 4),
            false));
    }
    return world;
}

std::vector<QaInstance> read_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open dataset file: " + path);
    }
    std::vector<QaInstance> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError("malformed dataset line " + std::to_string(lineno) +
                            ": " + e.what());
        }
        try {
            QaInstance inst;
            inst.id = j.at("id").get<std::string>();
            inst.question = j.at("question").get<std::string>();
            inst.answers = j.at("answers").get<std::vector<std::string>>();
            inst.gold_doc = j.at("gold_doc").get<std::string>();
            inst.distractor_docs =
                j.at("distractor_docs").get<std::vector<std::string>>();
            if (inst.answers.empty()) {
                throw DataError("dataset line " + std::to_string(lineno) +
                                ": instance has no answers");
            }
            out.push_back(std::move(inst));
        } catch (const json::exception& e) {
            throw DataError("malformed dataset line " + std::to_string(lineno) +
                            ": " + e.what());
        }
    }
    return out;
}

void write_dataset(const std::string& path,
                   const std::vector<QaInstance>& instances) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write dataset file: " + path);
    }
    for (const QaInstance& inst : instances) {
        json j;
        j["id"] = inst.id;
        j["question"] = inst.question;
        j["answers"] = inst.answers;
        j["gold_doc"] = inst.gold_doc;
        j["distractor_docs"] = inst.distractor_docs;
        out << j.dump() << "\n";
    }
    if (!out) {
        throw IoError("write failed: " + path);
    }
}

Vocab vocab_from_instances(const std::vector<QaInstance>& instances) {
    Vocab v;
    auto absorb = [&v](const std::string& text) {
        std::istringstream is(text);
        std::string w;
        while (is >> w) {
            v.add(w);
        }
    };
    // Prompt words come first so generator prompts stay in-vocabulary even
    // when the vocab is rebuilt from dataset text alone.
    for (const std::string& w : {"imagine", "context", ":"}) {
        v.add(w);
    }
    for (const QaInstance& inst : instances) {
        absorb(inst.question);
        for (const std::string& a : inst.answers) {
            absorb(a);
        }
        absorb(inst.gold_doc);
        for (const std::string& d : inst.distractor_docs) {
            absorb(d);
        }
    }
    return v;
}

}  // namespace aag
