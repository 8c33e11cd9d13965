#include "slukd/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <set>
#include <stdexcept>
#include <tuple>

namespace slukd::corpus {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Grammar
// ---------------------------------------------------------------------------

GrammarConfig Grammar::default_config() {
    GrammarConfig c;
    c.actions = {"activate", "deactivate", "increase", "decrease", "bring", "query"};
    c.objects = {"none",  "lights", "lamp",  "music",     "tv",    "fan",  "blinds",
                 "heat",  "volume", "shoes", "socks",     "newspaper", "juice", "temperature"};
    c.locations = {"none", "kitchen", "bedroom", "washroom"};

    const std::vector<std::string> devices = {"lights", "lamp", "music", "tv", "fan", "blinds"};
    const std::vector<std::string> rooms = {"kitchen", "bedroom", "washroom"};
    const std::vector<std::string> items = {"shoes", "socks", "newspaper", "juice"};

    auto tpl = [](std::string action, std::vector<std::string> objects,
                  std::vector<std::string> locations, std::vector<std::string> pattern) {
        return Template{std::move(action), std::move(objects), std::move(locations),
                        std::move(pattern)};
    };

    // every intent below is reachable through exactly three phrasings
    c.templates = {
        tpl("activate", devices, {"none"}, {"turn", "on", "the", "{object}"}),
        tpl("activate", devices, {"none"}, {"switch", "on", "the", "{object}"}),
        tpl("activate", devices, {"none"}, {"please", "activate", "the", "{object}"}),

        tpl("deactivate", devices, {"none"}, {"turn", "off", "the", "{object}"}),
        tpl("deactivate", devices, {"none"}, {"switch", "off", "the", "{object}"}),
        tpl("deactivate", devices, {"none"}, {"turn", "the", "{object}", "off"}),

        tpl("increase", {"heat"}, rooms, {"increase", "the", "temperature", "in", "the", "{location}"}),
        tpl("increase", {"heat"}, rooms, {"turn", "up", "the", "heat", "in", "the", "{location}"}),
        tpl("increase", {"heat"}, rooms, {"make", "it", "warmer", "in", "the", "{location}"}),

        tpl("increase", {"heat"}, {"none"}, {"increase", "the", "temperature"}),
        tpl("increase", {"heat"}, {"none"}, {"turn", "up", "the", "heat"}),
        tpl("increase", {"heat"}, {"none"}, {"make", "it", "warmer"}),

        tpl("decrease", {"heat"}, rooms, {"decrease", "the", "temperature", "in", "the", "{location}"}),
        tpl("decrease", {"heat"}, rooms, {"turn", "down", "the", "heat", "in", "the", "{location}"}),
        tpl("decrease", {"heat"}, rooms, {"make", "it", "cooler", "in", "the", "{location}"}),

        tpl("decrease", {"heat"}, {"none"}, {"decrease", "the", "temperature"}),
        tpl("decrease", {"heat"}, {"none"}, {"turn", "down", "the", "heat"}),
        tpl("decrease", {"heat"}, {"none"}, {"make", "it", "cooler"}),

        tpl("increase", {"volume"}, {"none"}, {"increase", "the", "volume"}),
        tpl("increase", {"volume"}, {"none"}, {"turn", "up", "the", "volume"}),
        tpl("increase", {"volume"}, {"none"}, {"make", "it", "louder"}),

        tpl("decrease", {"volume"}, {"none"}, {"decrease", "the", "volume"}),
        tpl("decrease", {"volume"}, {"none"}, {"turn", "down", "the", "volume"}),
        tpl("decrease", {"volume"}, {"none"}, {"make", "it", "quieter"}),

        tpl("bring", items, {"none"}, {"bring", "me", "the", "{object}"}),
        tpl("bring", items, {"none"}, {"fetch", "my", "{object}"}),
        tpl("bring", items, {"none"}, {"get", "me", "the", "{object}"}),

        tpl("query", {"temperature"}, rooms, {"what", "is", "the", "temperature", "in", "the", "{location}"}),
        tpl("query", {"temperature"}, rooms, {"how", "warm", "is", "it", "in", "the", "{location}"}),
        tpl("query", {"temperature"}, rooms, {"tell", "me", "the", "temperature", "in", "the", "{location}"}),

        tpl("query", {"temperature"}, {"none"}, {"what", "is", "the", "temperature"}),
        tpl("query", {"temperature"}, {"none"}, {"how", "warm", "is", "it"}),
        tpl("query", {"temperature"}, {"none"}, {"tell", "me", "the", "temperature"}),

        tpl("query", {"none"}, {"none"}, {"what", "can", "you", "do"}),
        tpl("query", {"none"}, {"none"}, {"help", "me"}),
        tpl("query", {"none"}, {"none"}, {"list", "your", "commands"}),
    };
    return c;
}

static int index_of(const std::vector<std::string>& list, const std::string& name,
                    const char* what) {
    for (size_t i = 0; i < list.size(); ++i)
        if (list[i] == name) return static_cast<int>(i);
    throw std::invalid_argument(std::string("grammar: unknown ") + what + " '" + name + "'");
}

Grammar Grammar::build(const GrammarConfig& config) {
    if (config.actions.empty() || config.objects.empty() || config.locations.empty())
        throw std::invalid_argument("grammar: empty slot value list");
    if (config.templates.empty()) throw std::invalid_argument("grammar: no templates");
    auto check_unique = [](const std::vector<std::string>& list, const char* what) {
        std::set<std::string> seen(list.begin(), list.end());
        if (seen.size() != list.size())
            throw std::invalid_argument(std::string("grammar: duplicate ") + what + " values");
    };
    check_unique(config.actions, "action");
    check_unique(config.objects, "object");
    check_unique(config.locations, "location");
    if (!std::count(config.objects.begin(), config.objects.end(), "none"))
        throw std::invalid_argument("grammar: object list must include 'none'");
    if (!std::count(config.locations.begin(), config.locations.end(), "none"))
        throw std::invalid_argument("grammar: location list must include 'none'");

    Grammar g;
    g.actions_ = config.actions;
    g.objects_ = config.objects;
    g.locations_ = config.locations;

    // expand templates into surface sequences
    struct Raw {
        std::vector<std::string> tokens;
        SlotLabel label;
    };
    std::vector<Raw> raw;
    std::set<std::string> vocab_set;
    for (const Template& t : config.templates) {
        const int action = index_of(config.actions, t.action, "action");
        if (t.objects.empty() || t.locations.empty())
            throw std::invalid_argument("grammar: template with empty slot list");
        for (const std::string& obj : t.objects) {
            const int object = index_of(config.objects, obj, "object");
            for (const std::string& loc : t.locations) {
                const int location = index_of(config.locations, loc, "location");
                Raw r;
                r.label = {action, object, location};
                for (const std::string& tok : t.pattern) {
                    if (tok == "{object}") {
                        if (obj == "none")
                            throw std::invalid_argument(
                                "grammar: {object} placeholder with object 'none'");
                        r.tokens.push_back(obj);
                    } else if (tok == "{location}") {
                        if (loc == "none")
                            throw std::invalid_argument(
                                "grammar: {location} placeholder with location 'none'");
                        r.tokens.push_back(loc);
                    } else {
                        r.tokens.push_back(tok);
                    }
                }
                for (const std::string& tok : r.tokens) vocab_set.insert(tok);
                raw.push_back(std::move(r));
            }
        }
    }

    g.vocab_.assign(vocab_set.begin(), vocab_set.end());
    for (size_t i = 0; i < g.vocab_.size(); ++i) g.token_ids_[g.vocab_[i]] = static_cast<int>(i);

    // every surface sequence must map to exactly one label, with no duplicates
    std::map<std::vector<std::string>, SlotLabel> seen;
    std::set<std::tuple<int, int, int>> intents;
    for (const Raw& r : raw) {
        std::vector<std::string> key;
        for (const std::string& tok : r.tokens) key.push_back(tok);
        auto it = seen.find(key);
        if (it != seen.end()) {
            std::string phrase;
            for (const auto& tok : key) phrase += tok + " ";
            throw std::invalid_argument("grammar: duplicate phrasing '" + phrase + "'");
        }
        seen.emplace(key, r.label);
        intents.insert({r.label.action, r.label.object, r.label.location});
        Instantiation inst;
        inst.label = r.label;
        for (const std::string& tok : r.tokens) inst.tokens.push_back(g.token_ids_.at(tok));
        g.instantiations_.push_back(std::move(inst));
    }
    g.intent_count_ = static_cast<int>(intents.size());
    return g;
}

SlotSpaces Grammar::slots() const {
    return {static_cast<int>(actions_.size()), static_cast<int>(objects_.size()),
            static_cast<int>(locations_.size())};
}

int Grammar::token_id(const std::string& token) const {
    auto it = token_ids_.find(token);
    if (it == token_ids_.end())
        throw std::invalid_argument("grammar: token '" + token + "' not in vocabulary");
    return it->second;
}

const std::string& Grammar::token_name(int id) const {
    if (id < 0 || id >= vocab_size())
        throw std::invalid_argument("grammar: token id " + std::to_string(id) + " out of range");
    return vocab_[id];
}

int Grammar::action_id(const std::string& name) const { return index_of(actions_, name, "action"); }
int Grammar::object_id(const std::string& name) const { return index_of(objects_, name, "object"); }
int Grammar::location_id(const std::string& name) const {
    return index_of(locations_, name, "location");
}

// ---------------------------------------------------------------------------
// Generation and the noise channel
// ---------------------------------------------------------------------------

Dataset generate(const Grammar& grammar, int n, uint64_t seed) {
    if (n < 1) throw std::invalid_argument("generate: need n >= 1, got " + std::to_string(n));
    const auto& pool = grammar.instantiations();
    Dataset out;
    out.reserve(n);
    Rng root(seed);
    for (int i = 0; i < n; ++i) {
        Rng rng = root.child(static_cast<uint64_t>(i));
        const auto& inst = pool[rng.uniform_index(pool.size())];
        Example e;
        e.id = i;
        e.tokens = inst.tokens;
        e.label = inst.label;
        out.push_back(std::move(e));
    }
    return out;
}

NoiseChannel NoiseChannel::default_for(int vocab_size) {
    if (vocab_size < 4)
        throw std::invalid_argument("channel: default needs a vocabulary of at least 4");
    NoiseChannel ch;
    ch.confusion.assign(vocab_size, std::vector<double>(vocab_size, 0.0));
    const double self_p = 0.8, confusable_p = 0.08;
    const double rest = (1.0 - self_p - 2.0 * confusable_p) / (vocab_size - 3);
    for (int i = 0; i < vocab_size; ++i) {
        for (int j = 0; j < vocab_size; ++j) ch.confusion[i][j] = rest;
        ch.confusion[i][i] = self_p;
        // two designated confusable neighbours in vocabulary order
        ch.confusion[i][(i + 1) % vocab_size] = confusable_p;
        ch.confusion[i][(i + 2) % vocab_size] = confusable_p;
    }
    ch.validate();
    return ch;
}

NoiseChannel NoiseChannel::identity(int vocab_size) {
    NoiseChannel ch;
    ch.confusion.assign(vocab_size, std::vector<double>(vocab_size, 0.0));
    for (int i = 0; i < vocab_size; ++i) ch.confusion[i][i] = 1.0;
    ch.dirichlet_concentration = std::numeric_limits<double>::infinity();
    ch.validate();
    return ch;
}

void NoiseChannel::validate() const {
    if (confusion.empty()) throw std::invalid_argument("channel: empty confusion matrix");
    const size_t v = confusion.size();
    for (size_t i = 0; i < v; ++i) {
        if (confusion[i].size() != v)
            throw std::invalid_argument("channel: confusion matrix must be square");
        double total = 0.0;
        for (double p : confusion[i]) {
            if (p < 0.0) throw std::invalid_argument("channel: negative confusion entry");
            total += p;
        }
        if (std::fabs(total - 1.0) > 1e-9)
            throw std::invalid_argument("channel: confusion row " + std::to_string(i) +
                                        " sums to " + std::to_string(total));
    }
    if (frames_per_token_min < 1 || frames_per_token_max < frames_per_token_min)
        throw std::invalid_argument("channel: bad frames-per-token range");
    if (!(dirichlet_concentration > 0.0))
        throw std::invalid_argument("channel: dirichlet concentration must be positive");
}

Example render_frames(const Example& example, const NoiseChannel& channel, uint64_t seed) {
    if (example.tokens.empty()) throw std::invalid_argument("render: empty token sequence");
    channel.validate();
    const int v = static_cast<int>(channel.confusion.size());
    Example out = example;
    out.frames.clear();
    Rng rng = Rng(seed).child(static_cast<uint64_t>(example.id));
    for (int tok : example.tokens) {
        if (tok < 0 || tok >= v)
            throw std::invalid_argument("render: token id " + std::to_string(tok) +
                                        " outside channel vocabulary");
        const int k = channel.frames_per_token_min +
                      static_cast<int>(rng.uniform_index(
                          channel.frames_per_token_max - channel.frames_per_token_min + 1));
        for (int f = 0; f < k; ++f) {
            // what the recognizer heard for this frame
            const int heard = static_cast<int>(rng.categorical(channel.confusion[tok]));
            const std::vector<double>& base = channel.confusion[heard];
            if (std::isinf(channel.dirichlet_concentration)) {
                out.frames.push_back(base);
                continue;
            }
            std::vector<double> alpha(v);
            for (int j = 0; j < v; ++j) alpha[j] = channel.dirichlet_concentration * base[j];
            out.frames.push_back(rng.dirichlet(alpha));
        }
    }
    return out;
}

Dataset render_frames(const Dataset& dataset, const NoiseChannel& channel, uint64_t seed) {
    Dataset out;
    out.reserve(dataset.size());
    for (const Example& e : dataset) out.push_back(render_frames(e, channel, seed));
    return out;
}

// ---------------------------------------------------------------------------
// Splits and subsampling
// ---------------------------------------------------------------------------

Split split(const Dataset& dataset, double train_frac, double valid_frac, double test_frac,
            uint64_t seed) {
    if (std::fabs(train_frac + valid_frac + test_frac - 1.0) > 1e-9)
        throw std::invalid_argument("split: fractions must sum to 1");
    if (train_frac < 0.0 || valid_frac < 0.0 || test_frac < 0.0)
        throw std::invalid_argument("split: negative fraction");
    std::vector<size_t> order(dataset.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng = Rng(seed).child(0x73706c6974ULL);
    rng.shuffle(order);
    const size_t n = dataset.size();
    const size_t n_train = static_cast<size_t>(std::floor(train_frac * n));
    const size_t n_valid = static_cast<size_t>(std::floor(valid_frac * n));
    Split out;
    for (size_t i = 0; i < n; ++i) {
        const Example& e = dataset[order[i]];
        if (i < n_train) out.train.push_back(e);
        else if (i < n_train + n_valid) out.valid.push_back(e);
        else out.test.push_back(e);
    }
    return out;
}

static long long intent_key(const SlotLabel& l) {
    return (static_cast<long long>(l.action) << 40) | (static_cast<long long>(l.object) << 20) |
           l.location;
}

Dataset subsample(const Dataset& train, double fraction, uint64_t seed) {
    if (!(fraction > 0.0) || fraction > 1.0)
        throw std::invalid_argument("subsample: fraction must be in (0,1], got " +
                                    std::to_string(fraction));
    if (train.empty()) throw std::invalid_argument("subsample: empty dataset");
    if (fraction == 1.0) return train;
    const size_t target = static_cast<size_t>(std::ceil(fraction * train.size()));

    // group example indices by intent, shuffled per group
    std::map<long long, std::vector<size_t>> groups;
    for (size_t i = 0; i < train.size(); ++i) groups[intent_key(train[i].label)].push_back(i);
    Rng root = Rng(seed).child(0x737562ULL);
    for (auto& [key, idx] : groups) {
        Rng rng = root.child(static_cast<uint64_t>(key));
        rng.shuffle(idx);
    }

    // proportional base counts, remainders by largest fractional part
    struct Share {
        long long key;
        size_t base;
        double frac;
    };
    std::vector<Share> shares;
    size_t assigned = 0;
    for (auto& [key, idx] : groups) {
        const double exact = fraction * static_cast<double>(idx.size());
        Share s{key, static_cast<size_t>(std::floor(exact)), exact - std::floor(exact)};
        s.base = std::min(s.base, idx.size());
        assigned += s.base;
        shares.push_back(s);
    }
    std::sort(shares.begin(), shares.end(), [](const Share& a, const Share& b) {
        if (a.frac != b.frac) return a.frac > b.frac;
        return a.key < b.key;
    });
    std::map<long long, size_t> take;
    for (const Share& s : shares) take[s.key] = s.base;
    for (auto it = shares.begin(); assigned < target; ) {
        if (it == shares.end()) it = shares.begin();
        if (take[it->key] < groups[it->key].size()) {
            ++take[it->key];
            ++assigned;
        }
        ++it;
    }

    // stratification: when the budget covers all intents, keep each one alive
    if (target >= groups.size()) {
        for (auto& [key, idx] : groups) {
            if (take[key] > 0) continue;
            // steal from the largest allocation
            long long donor = -1;
            size_t donor_take = 1;
            for (auto& [k2, t2] : take)
                if (t2 > donor_take) {
                    donor = k2;
                    donor_take = t2;
                }
            if (donor < 0) break;
            --take[donor];
            take[key] = 1;
        }
    }

    Dataset out;
    for (auto& [key, idx] : groups)
        for (size_t i = 0; i < take[key]; ++i) out.push_back(train[idx[i]]);
    std::sort(out.begin(), out.end(), [](const Example& a, const Example& b) {
        return a.id < b.id;
    });
    return out;
}

std::vector<int> corrupt_tokens(const Example& example, const NoiseChannel& channel, double rate,
                                uint64_t seed) {
    if (rate < 0.0 || rate > 1.0)
        throw std::invalid_argument("corrupt: rate must be in [0,1], got " + std::to_string(rate));
    channel.validate();
    Rng rng = Rng(seed).child(static_cast<uint64_t>(example.id) ^ 0x636f7272ULL);
    std::vector<int> out = example.tokens;
    for (int& tok : out) {
        if (rng.uniform() >= rate) continue;
        std::vector<double> weights = channel.confusion[tok];
        weights[tok] = 0.0;
        double total = 0.0;
        for (double w : weights) total += w;
        if (total <= 0.0) continue;  // no off-diagonal mass: token cannot be confused
        tok = static_cast<int>(rng.categorical(weights));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

void write_dataset(const std::string& path, const Dataset& dataset, const Grammar& grammar) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("dataset: cannot write " + path);
    for (const Example& e : dataset) {
        json line;
        line["id"] = e.id;
        json toks = json::array();
        for (int t : e.tokens) toks.push_back(grammar.token_name(t));
        line["tokens"] = std::move(toks);
        line["label"] = {{"action", grammar.actions()[e.label.action]},
                         {"object", grammar.objects()[e.label.object]},
                         {"location", grammar.locations()[e.label.location]}};
        if (!e.frames.empty()) line["frames"] = e.frames;
        out << line.dump() << "\n";
    }
    if (!out) throw std::runtime_error("dataset: write failed for " + path);
}

Dataset read_dataset(const std::string& path, const Grammar& grammar) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("dataset: cannot open " + path);
    Dataset out;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json doc = json::parse(line);
        Example e;
        e.id = doc.at("id").get<int>();
        for (const auto& tok : doc.at("tokens"))
            e.tokens.push_back(grammar.token_id(tok.get<std::string>()));
        const json& label = doc.at("label");
        e.label.action = grammar.action_id(label.at("action").get<std::string>());
        e.label.object = grammar.object_id(label.at("object").get<std::string>());
        e.label.location = grammar.location_id(label.at("location").get<std::string>());
        if (doc.contains("frames")) {
            e.frames = doc.at("frames").get<FrameSeq>();
            for (const auto& frame : e.frames)
                if (static_cast<int>(frame.size()) != grammar.vocab_size())
                    throw std::runtime_error("dataset: frame width mismatch at line " +
                                             std::to_string(line_no));
        }
        out.push_back(std::move(e));
    }
    return out;
}

NoiseChannel channel_from_json_file(const std::string& path, int vocab_size) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("channel: cannot open " + path);
    json doc;
    in >> doc;
    NoiseChannel ch;
    if (doc.contains("confusion")) {
        ch.confusion = doc.at("confusion").get<std::vector<std::vector<double>>>();
    } else {
        const double self_p = doc.value("self_probability", 0.8);
        const int n_conf = doc.value("confusables_per_token", 2);
        const double conf_p = doc.value("confusable_probability", 0.08);
        if (vocab_size < n_conf + 2)
            throw std::invalid_argument("channel: vocabulary too small for confusable count");
        const double rest_mass = 1.0 - self_p - n_conf * conf_p;
        if (rest_mass < -1e-12)
            throw std::invalid_argument("channel: confusion spec exceeds probability 1");
        const double rest =
            vocab_size > n_conf + 1 ? std::max(0.0, rest_mass) / (vocab_size - n_conf - 1) : 0.0;
        ch.confusion.assign(vocab_size, std::vector<double>(vocab_size, rest));
        for (int i = 0; i < vocab_size; ++i) {
            ch.confusion[i][i] = self_p;
            for (int c = 1; c <= n_conf; ++c) ch.confusion[i][(i + c) % vocab_size] = conf_p;
            // renormalize the row exactly
            double total = 0.0;
            for (double p : ch.confusion[i]) total += p;
            for (double& p : ch.confusion[i]) p /= total;
        }
    }
    ch.frames_per_token_min = doc.value("frames_per_token_min", 1);
    ch.frames_per_token_max = doc.value("frames_per_token_max", 3);
    if (doc.contains("dirichlet_concentration")) {
        const json& c = doc.at("dirichlet_concentration");
        if (c.is_string() && c.get<std::string>() == "inf")
            ch.dirichlet_concentration = std::numeric_limits<double>::infinity();
        else
            ch.dirichlet_concentration = c.get<double>();
    }
    ch.validate();
    return ch;
}

GrammarConfig grammar_config_from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("grammar: cannot open " + path);
    json doc;
    in >> doc;
    GrammarConfig cfg = Grammar::default_config();
    if (doc.contains("actions")) cfg.actions = doc.at("actions").get<std::vector<std::string>>();
    if (doc.contains("objects")) cfg.objects = doc.at("objects").get<std::vector<std::string>>();
    if (doc.contains("locations"))
        cfg.locations = doc.at("locations").get<std::vector<std::string>>();
    if (doc.contains("templates")) {
        cfg.templates.clear();
        for (const json& t : doc.at("templates")) {
            Template tpl;
            tpl.action = t.at("action").get<std::string>();
            tpl.objects = t.at("objects").get<std::vector<std::string>>();
            tpl.locations = t.at("locations").get<std::vector<std::string>>();
            tpl.pattern = t.at("pattern").get<std::vector<std::string>>();
            cfg.templates.push_back(std::move(tpl));
        }
    }
    return cfg;
}

void write_channel_json(const std::string& path, const NoiseChannel& channel) {
    json doc;
    doc["confusion"] = channel.confusion;
    doc["frames_per_token_min"] = channel.frames_per_token_min;
    doc["frames_per_token_max"] = channel.frames_per_token_max;
    if (std::isinf(channel.dirichlet_concentration))
        doc["dirichlet_concentration"] = "inf";
    else
        doc["dirichlet_concentration"] = channel.dirichlet_concentration;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("channel: cannot write " + path);
    out << doc.dump() << "\n";
}

}  // namespace slukd::corpus
