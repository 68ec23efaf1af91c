#pragma once

// Flat key=value run configuration. Every key has a default; command-line
// flags of the same name override file values.

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "mifn/synthetic.hpp"
#include "mifn/train.hpp"

namespace mifn {

struct RunConfig {
  // paths
  std::string events;
  std::string triples;
  std::string out = "mifn_out";
  std::string checkpoint;  // empty: <out>/model.ckpt
  // data
  DomainLabels labels;
  SequenceOptions sequences;
  std::array<double, 3> split{0.8, 0.1, 0.1};
  // knowledge subgraphs
  ExtractOptions extract;
  // model and training
  ModelConfig model;
  TrainConfig train;
  std::uint64_t seed = 42;
  std::size_t threads = 1;
  // evaluation and recommendation
  std::optional<double> ratio;
  std::uint64_t inject_seed = 7;
  std::size_t top_k = 10;
  // synthetic generator
  SyntheticConfig synthetic;

  std::string checkpoint_path() const { return checkpoint.empty() ? out + "/model.ckpt" : checkpoint; }

  struct Key {
    std::string name;
    std::string help;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
  };

  static const std::vector<Key>& keys();

  void set(const std::string& key, const std::string& value) {
    for (const Key& k : keys())
      if (k.name == key) {
        k.set(*this, value);
        return;
      }
    throw ConfigError("unknown config key '" + key + "'");
  }

  std::string get(const std::string& key) const {
    for (const Key& k : keys())
      if (k.name == key) return k.get(*this);
    throw ConfigError("unknown config key '" + key + "'");
  }

  /// Reads `key = value` lines; blank lines and '#' comments are skipped.
  void load(std::istream& in, const std::string& source = "config") {
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string t = trim(line);
      if (t.empty()) continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos) throw ConfigError(source + ":" + std::to_string(n) + ": expected key = value");
      try {
        set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
      } catch (const ConfigError& e) {
        throw ConfigError(source + ":" + std::to_string(n) + ": " + e.what());
      }
    }
  }

  void load_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read config file " + path);
    load(f, path);
  }

  void write(std::ostream& out) const {
    for (const Key& k : keys()) out << k.name << " = " << k.get(*this) << '\n';
  }

  void validate() const {
    if (model.dim == 0 || extract.max_hops == 0 || extract.budget == 0)
      throw ConfigError("dim, hops and budget must be positive");
    if (train.epochs == 0 || train.batch_size == 0) throw ConfigError("epochs and batch_size must be positive");
    if (train.adam.lr < 0) throw ConfigError("lr must be non-negative");
    const double sum = split[0] + split[1] + split[2];
    if (split[0] <= 0 || split[1] <= 0 || split[2] <= 0 || std::abs(sum - 1.0) > 1e-9)
      throw ConfigError("split ratios must be positive and sum to 1");
    if (ratio && !(*ratio >= 0.0 && *ratio <= 1.0)) throw ConfigError("ratio must lie in [0, 1]");
    if (labels.a == labels.b) throw ConfigError("the two domain labels must differ");
    synthetic.validate();
  }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }
};

namespace detail {

template <typename T>
T parse_number(const std::string& s, const std::string& key) {
  T v{};
  const char* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end) throw ConfigError("bad value '" + s + "' for " + key);
  return v;
}

inline bool parse_bool(const std::string& s, const std::string& key) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError("bad boolean '" + s + "' for " + key);
}

inline std::string show(double x) {
  std::ostringstream o;
  o << std::setprecision(17) << x;
  return o.str();
}

#define MIFN_NUM_KEY(NAME, HELP, TYPE, FIELD)                                                                 \
  RunConfig::Key {                                                                                            \
    NAME, HELP, [](RunConfig& c, const std::string& v) { c.FIELD = detail::parse_number<TYPE>(v, NAME); },    \
        [](const RunConfig& c) {                                                                              \
          if constexpr (std::is_floating_point_v<TYPE>) return detail::show(static_cast<double>(c.FIELD));   \
          else return std::to_string(c.FIELD);                                                                \
        }                                                                                                     \
  }
#define MIFN_STR_KEY(NAME, HELP, FIELD)                                                               \
  RunConfig::Key {                                                                                    \
    NAME, HELP, [](RunConfig& c, const std::string& v) { c.FIELD = v; }, [](const RunConfig& c) { return c.FIELD; } \
  }

}  // namespace detail

inline const std::vector<RunConfig::Key>& RunConfig::keys() {
  using detail::parse_bool;
  static const std::vector<Key> table = {
      MIFN_STR_KEY("events", "interaction log, TSV user/item/domain/timestamp", events),
      MIFN_STR_KEY("triples", "knowledge triples, TSV head/relation/tail", triples),
      MIFN_STR_KEY("out", "output and cache directory", out),
      MIFN_STR_KEY("checkpoint", "checkpoint path (default <out>/model.ckpt)", checkpoint),
      MIFN_STR_KEY("domain_a", "label of domain A in the events file", labels.a),
      MIFN_STR_KEY("domain_b", "label of domain B in the events file", labels.b),
      Key{"period", "sequence period in seconds, or 'month' / 'year'",
          [](RunConfig& c, const std::string& v) {
            if (v == "month") c.sequences.period_seconds = kPeriodMonth;
            else if (v == "year") c.sequences.period_seconds = kPeriodYear;
            else c.sequences.period_seconds = detail::parse_number<std::int64_t>(v, "period");
            if (c.sequences.period_seconds <= 0) throw ConfigError("period must be positive");
          },
          [](const RunConfig& c) { return std::to_string(c.sequences.period_seconds); }},
      MIFN_NUM_KEY("min_user", "minimum interactions per user", std::size_t, sequences.min_user_interactions),
      MIFN_NUM_KEY("min_item", "minimum occurrences per item", std::size_t, sequences.min_item_freq),
      MIFN_NUM_KEY("min_per_domain", "minimum items of each domain per sequence", std::size_t,
                   sequences.min_per_domain),
      MIFN_NUM_KEY("train_ratio", "training share of each user's sequences", double, split[0]),
      MIFN_NUM_KEY("valid_ratio", "validation share", double, split[1]),
      MIFN_NUM_KEY("test_ratio", "test share", double, split[2]),
      MIFN_NUM_KEY("hops", "maximum expansion hops for subgraph extraction", std::size_t, extract.max_hops),
      MIFN_NUM_KEY("budget", "maximum entities per subgraph", std::size_t, extract.budget),
      MIFN_NUM_KEY("dim", "embedding and hidden size", std::size_t, model.dim),
      MIFN_NUM_KEY("layers", "graph dissemination layers", std::size_t, model.ktu.layers),
      Key{"relation_weights", "learn one scalar weight per relation in dissemination",
          [](RunConfig& c, const std::string& v) { c.model.ktu.relation_weights = parse_bool(v, "relation_weights"); },
          [](const RunConfig& c) { return std::string(c.model.ktu.relation_weights ? "true" : "false"); }},
      Key{"activation", "dissemination activation: sigmoid or identity",
          [](RunConfig& c, const std::string& v) {
            if (v == "sigmoid") c.model.ktu.activation = Activation::kSigmoid;
            else if (v == "identity") c.model.ktu.activation = Activation::kIdentity;
            else throw ConfigError("activation must be sigmoid or identity");
          },
          [](const RunConfig& c) {
            return std::string(c.model.ktu.activation == Activation::kSigmoid ? "sigmoid" : "identity");
          }},
      Key{"variant", "MIFN, MIFN+L_M or MIFN-KTU",
          [](RunConfig& c, const std::string& v) { c.model.variant = parse_variant(v); },
          [](const RunConfig& c) { return std::string(variant_name(c.model.variant)); }},
      Key{"mode_loss", "mode-loss reading: as_written (log P(seq)) or graph (log P(graph))",
          [](RunConfig& c, const std::string& v) {
            if (v == "as_written") c.model.mode_loss = ModeLossReading::kAsWritten;
            else if (v == "graph") c.model.mode_loss = ModeLossReading::kGraphMode;
            else throw ConfigError("mode_loss must be as_written or graph");
          },
          [](const RunConfig& c) {
            return std::string(c.model.mode_loss == ModeLossReading::kAsWritten ? "as_written" : "graph");
          }},
      Key{"train_target", "last (final item per domain) or all (every position)",
          [](RunConfig& c, const std::string& v) {
            if (v == "last") c.model.target = TrainTarget::kLastItem;
            else if (v == "all") c.model.target = TrainTarget::kAllPositions;
            else throw ConfigError("train_target must be last or all");
          },
          [](const RunConfig& c) { return std::string(c.model.target == TrainTarget::kLastItem ? "last" : "all"); }},
      MIFN_NUM_KEY("lr", "Adam learning rate", double, train.adam.lr),
      MIFN_NUM_KEY("beta1", "Adam beta1", double, train.adam.beta1),
      MIFN_NUM_KEY("beta2", "Adam beta2", double, train.adam.beta2),
      MIFN_NUM_KEY("adam_eps", "Adam epsilon", double, train.adam.eps),
      MIFN_NUM_KEY("clip", "global gradient-norm clip (0 disables)", double, train.clip),
      MIFN_NUM_KEY("epochs", "maximum training epochs", std::size_t, train.epochs),
      MIFN_NUM_KEY("batch_size", "sequences per batch", std::size_t, train.batch_size),
      MIFN_NUM_KEY("patience", "epochs without validation gain before stopping", std::size_t, train.patience),
      MIFN_NUM_KEY("seed", "global seed (split, init, shuffling, generator)", std::uint64_t, seed),
      MIFN_NUM_KEY("threads", "worker threads for extraction and evaluation", std::size_t, threads),
      Key{"ratio", "ground-truth injection ratio for evaluate, or none",
          [](RunConfig& c, const std::string& v) {
            if (v == "none" || v.empty()) c.ratio.reset();
            else c.ratio = detail::parse_number<double>(v, "ratio");
          },
          [](const RunConfig& c) { return c.ratio ? detail::show(*c.ratio) : std::string("none"); }},
      MIFN_NUM_KEY("inject_seed", "seed choosing the injected sequences", std::uint64_t, inject_seed),
      MIFN_NUM_KEY("top_k", "list length for recommend", std::size_t, top_k),
      MIFN_NUM_KEY("synth_users", "generator: users", std::size_t, synthetic.users),
      MIFN_NUM_KEY("synth_sequences_per_user", "generator: sequences per user", std::size_t,
                   synthetic.sequences_per_user),
      MIFN_NUM_KEY("synth_items_a", "generator: domain-A catalog size", std::size_t, synthetic.items_a),
      MIFN_NUM_KEY("synth_items_b", "generator: domain-B catalog size", std::size_t, synthetic.items_b),
      MIFN_NUM_KEY("synth_min_len", "generator: minimum items per domain per sequence", std::size_t,
                   synthetic.min_domain_len),
      MIFN_NUM_KEY("synth_max_len", "generator: maximum items per domain per sequence", std::size_t,
                   synthetic.max_domain_len),
      MIFN_NUM_KEY("synth_p_link", "generator: probability the B target follows the planted link", double,
                   synthetic.p_link),
      MIFN_NUM_KEY("synth_categories", "generator: number of category entities", std::size_t, synthetic.categories),
      MIFN_NUM_KEY("synth_also_buy", "generator: Also_buy triples per domain-A item", std::size_t,
                   synthetic.also_buy),
  };
  return table;
}

#undef MIFN_NUM_KEY
#undef MIFN_STR_KEY

}  // namespace mifn
