#pragma once

// Interaction logs, hybrid two-domain sequences, vocabularies and splits.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mifn/error.hpp"
#include "mifn/log.hpp"
#include "mifn/random.hpp"

namespace mifn {

enum class Domain : std::uint8_t { A = 0, B = 1 };

/// Relation used for planted links and ground-truth injection.
inline constexpr const char* kSameCategory = "Is_the_same_category";

inline constexpr std::array<Domain, 2> kDomains = {Domain::A, Domain::B};

inline std::size_t idx(Domain d) { return static_cast<std::size_t>(d); }
inline Domain other(Domain d) { return d == Domain::A ? Domain::B : Domain::A; }
inline const char* domain_name(Domain d) { return d == Domain::A ? "A" : "B"; }

inline std::optional<Domain> parse_domain(std::string_view s) {
  if (s == "A") return Domain::A;
  if (s == "B") return Domain::B;
  return std::nullopt;
}

/// Labels used for the two domains in event files ("A"/"B" unless configured).
struct DomainLabels {
  std::string a = "A";
  std::string b = "B";

  std::optional<Domain> parse(std::string_view s) const {
    if (s == a) return Domain::A;
    if (s == b) return Domain::B;
    return std::nullopt;
  }
  const std::string& label(Domain d) const { return d == Domain::A ? a : b; }
};

struct Event {
  std::string user_id;
  std::string item_id;
  Domain domain = Domain::A;
  std::int64_t timestamp = 0;

  bool operator==(const Event&) const = default;
};

struct EventLog {
  std::vector<Event> events;
  std::size_t lines = 0;
  std::size_t malformed = 0;
};

namespace detail {

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

inline std::string_view strip_cr(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

template <typename Int>
bool parse_int(std::string_view s, Int& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

}  // namespace detail

/// Parses `user<TAB>item<TAB>domain<TAB>unix_timestamp` lines. Blank lines and
/// lines starting with '#' are skipped. More than 10% malformed lines is fatal.
inline EventLog parse_events(std::istream& in, const DomainLabels& labels = {}) {
  EventLog log;
  std::string line;
  while (std::getline(in, line)) {
    std::string_view l = detail::strip_cr(line);
    if (l.empty() || l.front() == '#') continue;
    ++log.lines;
    auto f = detail::split_tabs(l);
    std::int64_t ts = 0;
    std::optional<Domain> dom;
    if (f.size() != 4 || f[0].empty() || f[1].empty() || !(dom = labels.parse(f[2])) ||
        !detail::parse_int(f[3], ts) || ts < 0) {
      ++log.malformed;
      continue;
    }
    log.events.push_back(Event{std::string(f[0]), std::string(f[1]), *dom, ts});
  }
  if (log.lines == 0) log::warn("event file is empty");
  if (log.malformed > 0) log::warn("skipped " + std::to_string(log.malformed) + " malformed event lines");
  if (log.malformed * 10 > log.lines)
    throw FormatError(std::to_string(log.malformed) + " of " + std::to_string(log.lines) +
                      " event lines are malformed (limit 10%)");
  return log;
}

inline EventLog ingest_events(const std::string& path, const DomainLabels& labels = {}) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read events file " + path);
  return parse_events(f, labels);
}

inline void write_events(std::ostream& out, const std::vector<Event>& events, const DomainLabels& labels = {}) {
  for (const Event& e : events)
    out << e.user_id << '\t' << e.item_id << '\t' << labels.label(e.domain) << '\t' << e.timestamp << '\n';
}

struct Interaction {
  std::size_t item = 0;
  Domain domain = Domain::A;

  bool operator==(const Interaction&) const = default;
};

/// One user's interactions within one period, in time order. The last item of
/// each domain is that domain's ground truth; the remaining items form the
/// encoded prefix.
struct HybridSequence {
  std::size_t id = 0;
  std::string key;
  std::string user;
  std::vector<Interaction> items;

  std::size_t count(Domain d) const {
    return static_cast<std::size_t>(
        std::count_if(items.begin(), items.end(), [d](const Interaction& x) { return x.domain == d; }));
  }

  /// Position in `items` of the last interaction of domain d, if any.
  std::optional<std::size_t> last_position(Domain d) const {
    for (std::size_t i = items.size(); i-- > 0;)
      if (items[i].domain == d) return i;
    return std::nullopt;
  }

  std::size_t ground_truth(Domain d) const {
    auto p = last_position(d);
    require(p.has_value(), "sequence " + key + " has no item in domain " + domain_name(d));
    return items[*p].item;
  }

  /// Items with both ground truths removed.
  std::vector<Interaction> prefix() const {
    const auto pa = last_position(Domain::A);
    const auto pb = last_position(Domain::B);
    std::vector<Interaction> out;
    out.reserve(items.size());
    for (std::size_t i = 0; i < items.size(); ++i)
      if (i != pa && i != pb) out.push_back(items[i]);
    return out;
  }

  /// Positions (within `seq`) of domain-d interactions.
  static std::vector<std::size_t> positions(const std::vector<Interaction>& seq, Domain d) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < seq.size(); ++i)
      if (seq[i].domain == d) out.push_back(i);
    return out;
  }
};

/// Dense per-domain item catalogs. Indices are assigned in ascending id order.
/// `in_training` marks items seen in training sequences; only those can be
/// scored by the sequence decoder.
class Vocabulary {
 public:
  Vocabulary() = default;

  static Vocabulary from_ids(std::array<std::vector<std::string>, 2> ids) {
    Vocabulary v;
    for (Domain d : kDomains) {
      auto& list = ids[idx(d)];
      std::sort(list.begin(), list.end());
      list.erase(std::unique(list.begin(), list.end()), list.end());
      v.items_[idx(d)] = list;
      for (std::size_t i = 0; i < list.size(); ++i) v.index_[idx(d)].emplace(list[i], i);
      v.in_training_[idx(d)].assign(list.size(), true);
    }
    return v;
  }

  std::size_t size(Domain d) const { return items_[idx(d)].size(); }
  const std::string& item(Domain d, std::size_t i) const { return items_[idx(d)].at(i); }
  const std::vector<std::string>& items(Domain d) const { return items_[idx(d)]; }

  std::optional<std::size_t> find(Domain d, const std::string& id) const {
    auto it = index_[idx(d)].find(id);
    if (it == index_[idx(d)].end()) return std::nullopt;
    return it->second;
  }

  bool in_training(Domain d, std::size_t i) const { return in_training_[idx(d)].at(i); }
  const std::vector<bool>& training_mask(Domain d) const { return in_training_[idx(d)]; }
  std::size_t training_count(Domain d) const {
    return static_cast<std::size_t>(std::count(in_training_[idx(d)].begin(), in_training_[idx(d)].end(), true));
  }

  bool frozen() const { return frozen_; }

  /// Restricts the trainable set to items occurring in `train` and freezes the vocabulary.
  void mark_training(const std::vector<HybridSequence>& sequences, const std::vector<std::size_t>& train) {
    require(!frozen_, "vocabulary is frozen");
    for (Domain d : kDomains) in_training_[idx(d)].assign(size(d), false);
    for (std::size_t s : train)
      for (const auto& x : sequences.at(s).items) in_training_[idx(x.domain)][x.item] = true;
    frozen_ = true;
  }

  void set_training_mask(Domain d, std::vector<bool> mask) {
    require(mask.size() == size(d), "training mask size mismatch");
    in_training_[idx(d)] = std::move(mask);
    frozen_ = true;
  }

 private:
  std::array<std::vector<std::string>, 2> items_;
  std::array<std::unordered_map<std::string, std::size_t>, 2> index_;
  std::array<std::vector<bool>, 2> in_training_;
  bool frozen_ = false;
};

struct SequenceOptions {
  std::int64_t period_seconds = 2'592'000;  // 30 days
  std::size_t min_user_interactions = 10;
  std::size_t min_item_freq = 10;
  std::size_t min_per_domain = 3;
};

inline constexpr std::int64_t kPeriodMonth = 2'592'000;
inline constexpr std::int64_t kPeriodYear = 31'536'000;

struct SequenceDataset {
  std::vector<HybridSequence> sequences;
  Vocabulary vocab;
};

/// Drops users with fewer than min_user interactions and items with fewer than
/// min_item occurrences, repeating until neither rule removes anything.
inline std::vector<Event> frequency_filter(std::vector<Event> events, std::size_t min_user, std::size_t min_item) {
  while (true) {
    std::unordered_map<std::string, std::size_t> users;
    std::array<std::unordered_map<std::string, std::size_t>, 2> items;
    for (const Event& e : events) {
      ++users[e.user_id];
      ++items[idx(e.domain)][e.item_id];
    }
    std::vector<Event> kept;
    kept.reserve(events.size());
    for (Event& e : events)
      if (users[e.user_id] >= min_user && items[idx(e.domain)][e.item_id] >= min_item) kept.push_back(std::move(e));
    if (kept.size() == events.size()) return kept;
    events = std::move(kept);
  }
}

inline std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

/// Filters, orders and buckets events into hybrid sequences (one per user and
/// period holding at least min_per_domain items of each domain).
inline SequenceDataset build_hybrid_sequences(std::vector<Event> events, const SequenceOptions& opt = {}) {
  require(opt.period_seconds > 0, "period_seconds must be positive");
  if (events.empty()) throw DatasetError("no events to build sequences from");
  events = frequency_filter(std::move(events), opt.min_user_interactions, opt.min_item_freq);

  std::map<std::string, std::vector<Event>> by_user;
  for (Event& e : events) by_user[e.user_id].push_back(std::move(e));

  struct Raw {
    std::string key;
    std::string user;
    std::vector<std::pair<std::string, Domain>> items;
  };
  std::vector<Raw> raws;
  std::array<std::vector<std::string>, 2> ids;
  for (auto& [user, list] : by_user) {
    std::stable_sort(list.begin(), list.end(), [](const Event& x, const Event& y) {
      if (x.timestamp != y.timestamp) return x.timestamp < y.timestamp;
      return x.item_id < y.item_id;
    });
    std::size_t i = 0;
    while (i < list.size()) {
      const std::int64_t bucket = floor_div(list[i].timestamp, opt.period_seconds);
      std::size_t j = i;
      std::array<std::size_t, 2> counts{0, 0};
      Raw raw{user + "#" + std::to_string(bucket), user, {}};
      while (j < list.size() && floor_div(list[j].timestamp, opt.period_seconds) == bucket) {
        ++counts[idx(list[j].domain)];
        raw.items.emplace_back(list[j].item_id, list[j].domain);
        ++j;
      }
      if (counts[0] >= opt.min_per_domain && counts[1] >= opt.min_per_domain) {
        for (const auto& [id, d] : raw.items) ids[idx(d)].push_back(id);
        raws.push_back(std::move(raw));
      }
      i = j;
    }
  }
  if (raws.empty()) throw DatasetError("no sequence survives filtering");

  SequenceDataset out;
  out.vocab = Vocabulary::from_ids(std::move(ids));
  out.sequences.reserve(raws.size());
  for (std::size_t s = 0; s < raws.size(); ++s) {
    HybridSequence seq;
    seq.id = s;
    seq.key = raws[s].key;
    seq.user = raws[s].user;
    for (const auto& [id, d] : raws[s].items) seq.items.push_back({*out.vocab.find(d, id), d});
    out.sequences.push_back(std::move(seq));
  }
  return out;
}

enum class SplitLabel : std::uint8_t { kTrain = 0, kValid = 1, kTest = 2 };

inline const char* split_name(SplitLabel s) {
  switch (s) {
    case SplitLabel::kTrain: return "train";
    case SplitLabel::kValid: return "valid";
    case SplitLabel::kTest: return "test";
  }
  return "?";
}

inline std::optional<SplitLabel> parse_split(std::string_view s) {
  if (s == "train") return SplitLabel::kTrain;
  if (s == "valid") return SplitLabel::kValid;
  if (s == "test") return SplitLabel::kTest;
  return std::nullopt;
}

struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> valid;
  std::vector<std::size_t> test;

  const std::vector<std::size_t>& part(SplitLabel s) const {
    return s == SplitLabel::kTrain ? train : s == SplitLabel::kValid ? valid : test;
  }
  std::vector<std::size_t>& part(SplitLabel s) {
    return s == SplitLabel::kTrain ? train : s == SplitLabel::kValid ? valid : test;
  }
  std::size_t total() const { return train.size() + valid.size() + test.size(); }
};

/// Per-user random split. Users are visited in id order and each user's
/// sequences are shuffled; every sequence then goes to the split whose running
/// count lags its quota (ratio * sequences seen) the most, ties to the earlier
/// split. Each split stays within one of its exact quota at every prefix.
inline DatasetSplit split_dataset(const std::vector<HybridSequence>& sequences,
                                  std::array<double, 3> ratios = {0.8, 0.1, 0.1}, std::uint64_t seed = 0) {
  for (double r : ratios) require(r > 0, "split ratios must be positive");
  require(std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) <= 1e-9, "split ratios must sum to 1");
  if (sequences.size() < 3)
    log::warn("only " + std::to_string(sequences.size()) + " sequences; some splits will be empty");

  std::map<std::string, std::vector<std::size_t>> by_user;
  for (std::size_t i = 0; i < sequences.size(); ++i) by_user[sequences[i].user].push_back(i);

  Rng rng(seed, /*stream=*/0x73706c6974ULL);
  DatasetSplit out;
  std::array<std::size_t, 3> counts{0, 0, 0};
  std::size_t seen = 0;
  for (auto& [_, ids] : by_user) {
    std::sort(ids.begin(), ids.end(),
              [&](std::size_t x, std::size_t y) { return sequences[x].key < sequences[y].key; });
    rng.shuffle(ids);
    for (std::size_t id : ids) {
      ++seen;
      std::size_t best = 0;
      double best_deficit = -1e300;
      for (std::size_t c = 0; c < 3; ++c) {
        const double deficit = ratios[c] * static_cast<double>(seen) - static_cast<double>(counts[c]);
        if (deficit > best_deficit + 1e-12) {
          best = c;
          best_deficit = deficit;
        }
      }
      ++counts[best];
      out.part(static_cast<SplitLabel>(best)).push_back(id);
    }
  }
  for (auto* part : {&out.train, &out.valid, &out.test}) std::sort(part->begin(), part->end());
  return out;
}

}  // namespace mifn
