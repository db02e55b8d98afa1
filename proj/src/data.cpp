#include "fade/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fade/errors.hpp"

namespace fade {

namespace {

// Splits on a delimiter string ("::") or single char (',').
std::vector<std::string_view> split_fields(std::string_view line, std::string_view delim) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    std::size_t next = line.find(delim, pos);
    if (next == std::string_view::npos) {
      out.push_back(line.substr(pos));
      break;
    }
    out.push_back(line.substr(pos, next - pos));
    pos = next + delim.size();
  }
  return out;
}

std::int64_t parse_i64(std::string_view field, std::size_t line_no, const char* what) {
  std::int64_t value = 0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  while (begin != end && std::isspace(static_cast<unsigned char>(*begin))) ++begin;
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc{} || ptr != end) {
    throw ParseError("line " + std::to_string(line_no) + ": bad " + what + " field '" +
                     std::string(field) + "'");
  }
  return value;
}

bool blank(const std::string& line) {
  return std::all_of(line.begin(), line.end(),
                     [](unsigned char c) { return std::isspace(c); });
}

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

// Attribute files map original user ids to {0,1}. MovieLens users.dat rows
// look like "1::F::1::10::48067"; generic CSV rows are "user,attr".
std::unordered_map<std::int64_t, std::uint8_t> parse_attributes(std::istream& in, LogFormat format,
                                                                const AttributeMapping& mapping) {
  std::unordered_map<std::int64_t, std::uint8_t> attrs;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = strip_cr(std::move(raw));
    if (blank(line)) continue;
    if (format == LogFormat::MovielensDat) {
      auto fields = split_fields(line, "::");
      if (fields.size() < 2) throw ParseError("users line " + std::to_string(line_no) + ": expected UserID::Gender");
      std::int64_t user = parse_i64(fields[0], line_no, "user");
      if (fields[1].empty()) throw ParseError("users line " + std::to_string(line_no) + ": empty gender");
      char code = static_cast<char>(std::toupper(static_cast<unsigned char>(fields[1][0])));
      std::uint8_t a;
      if (code == mapping.group1_code) a = 1;
      else if (code == mapping.group0_code) a = 0;
      else throw ParseError("users line " + std::to_string(line_no) + ": unknown gender code '" + std::string(fields[1]) + "'");
      attrs[user] = a;
    } else {
      if (line_no == 1 && line.find("user") != std::string::npos) continue;  // header
      auto fields = split_fields(line, ",");
      if (fields.size() != 2) throw ParseError("attrs line " + std::to_string(line_no) + ": expected user,attr");
      std::int64_t user = parse_i64(fields[0], line_no, "user");
      std::int64_t a = parse_i64(fields[1], line_no, "attr");
      if (a != 0 && a != 1) throw ParseError("attrs line " + std::to_string(line_no) + ": attribute must be 0 or 1");
      attrs[user] = static_cast<std::uint8_t>(a);
    }
  }
  return attrs;
}

}  // namespace

bool PeriodDataset::user_has_positive(UserId u, ItemId i) const {
  auto it = per_user_positives.find(u);
  if (it == per_user_positives.end()) return false;
  return std::binary_search(it->second.begin(), it->second.end(), i);
}

InteractionLog parse_interactions(std::istream& source, LogFormat format,
                                  std::istream& attribute_source, const AttributeMapping& mapping) {
  auto attrs = parse_attributes(attribute_source, format, mapping);

  InteractionLog log;
  std::unordered_map<std::int64_t, UserId> user_map;
  std::unordered_map<std::int64_t, ItemId> item_map;
  const std::string delim = format == LogFormat::MovielensDat ? "::" : ",";

  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(source, raw)) {
    ++line_no;
    std::string line = strip_cr(std::move(raw));
    if (blank(line)) continue;
    if (format == LogFormat::Csv && line_no == 1 && line.find("user") != std::string::npos) continue;

    auto fields = split_fields(line, delim);
    if (fields.size() != 4) {
      throw ParseError("line " + std::to_string(line_no) + ": expected 4 fields, got " +
                       std::to_string(fields.size()));
    }
    std::int64_t src_user = parse_i64(fields[0], line_no, "user");
    std::int64_t src_item = parse_i64(fields[1], line_no, "item");
    std::int64_t rating = parse_i64(fields[2], line_no, "rating");
    std::int64_t ts = parse_i64(fields[3], line_no, "timestamp");

    auto attr_it = attrs.find(src_user);
    if (attr_it == attrs.end()) {
      throw ParseError("user " + std::to_string(src_user) + " has no attribute entry");
    }

    auto [uit, user_new] = user_map.try_emplace(src_user, static_cast<UserId>(log.original_user_ids.size()));
    if (user_new) {
      log.original_user_ids.push_back(src_user);
      log.user_attribute.push_back(attr_it->second);
    }
    auto [iit, item_new] = item_map.try_emplace(src_item, static_cast<ItemId>(log.original_item_ids.size()));
    if (item_new) log.original_item_ids.push_back(src_item);

    log.records.push_back({uit->second, iit->second, static_cast<int>(rating), ts, attr_it->second});
  }
  log.user_count = static_cast<int>(log.original_user_ids.size());
  log.item_count = static_cast<int>(log.original_item_ids.size());
  return log;
}

InteractionLog parse_interactions_files(const std::string& data_path, LogFormat format,
                                        const std::string& attrs_path, const AttributeMapping& mapping) {
  std::ifstream data(data_path);
  if (!data) throw ParseError("cannot open data file: " + data_path);
  std::ifstream attrs(attrs_path);
  if (!attrs) throw ParseError("cannot open attribute file: " + attrs_path);
  return parse_interactions(data, format, attrs, mapping);
}

InteractionLog binarize(const InteractionLog& log, int threshold) {
  if (threshold < 0) throw ConfigError("binarize: threshold must be >= 0");
  InteractionLog out;
  out.user_count = log.user_count;
  out.item_count = log.item_count;
  out.original_user_ids = log.original_user_ids;
  out.original_item_ids = log.original_item_ids;
  out.user_attribute = log.user_attribute;
  out.records.reserve(log.records.size());
  for (const auto& r : log.records) {
    if (r.rating > threshold) out.records.push_back(r);
  }
  return out;
}

std::vector<PeriodDataset> temporal_split(const InteractionLog& log, double pretrain_fraction,
                                          double dynamic_fraction, int periods) {
  if (log.records.empty()) throw ConfigError("temporal_split: empty log");
  if (periods < 1) throw ConfigError("temporal_split: need at least one dynamic period");
  if (pretrain_fraction <= 0.0 || pretrain_fraction >= 1.0)
    throw ConfigError("temporal_split: pretrain_fraction must be in (0,1)");
  if (dynamic_fraction <= 0.0 || pretrain_fraction + dynamic_fraction > 1.0 + 1e-12)
    throw ConfigError("temporal_split: pretrain_fraction + dynamic_fraction must be <= 1");

  // Stable sort keeps file order for equal timestamps, so splits are
  // reproducible for any input.
  std::vector<std::size_t> order(log.records.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return log.records[a].timestamp < log.records[b].timestamp;
  });

  const std::size_t n = order.size();
  const auto pretrain_n = static_cast<std::size_t>(pretrain_fraction * static_cast<double>(n));
  const auto dynamic_n = static_cast<std::size_t>(dynamic_fraction * static_cast<double>(n));
  if (pretrain_n == 0) throw ConfigError("temporal_split: pretrain period is empty");
  if (dynamic_n < static_cast<std::size_t>(periods))
    throw ConfigError("temporal_split: a dynamic period would be empty");

  std::vector<PeriodDataset> out(static_cast<std::size_t>(periods) + 1);
  const std::size_t base = dynamic_n / static_cast<std::size_t>(periods);
  const std::size_t extra = dynamic_n % static_cast<std::size_t>(periods);

  std::size_t cursor = 0;
  for (int t = 0; t <= periods; ++t) {
    std::size_t len = t == 0 ? pretrain_n : base + (static_cast<std::size_t>(t) <= extra ? 1 : 0);
    PeriodDataset& p = out[static_cast<std::size_t>(t)];
    p.index = t;
    p.positives.reserve(len);
    for (std::size_t k = 0; k < len; ++k) {
      const auto& r = log.records[order[cursor++]];
      p.positives.emplace_back(r.user, r.item);
      p.users.push_back(r.user);
      p.items.push_back(r.item);
      p.per_user_positives[r.user].push_back(r.item);
    }
    std::sort(p.users.begin(), p.users.end());
    p.users.erase(std::unique(p.users.begin(), p.users.end()), p.users.end());
    std::sort(p.items.begin(), p.items.end());
    p.items.erase(std::unique(p.items.begin(), p.items.end()), p.items.end());
    for (auto& [u, items] : p.per_user_positives) {
      std::sort(items.begin(), items.end());
      items.erase(std::unique(items.begin(), items.end()), items.end());
    }
  }
  return out;
}

SplitDataset build_split(const InteractionLog& log, double pretrain_fraction,
                         double dynamic_fraction, int periods) {
  SplitDataset split;
  split.periods = temporal_split(log, pretrain_fraction, dynamic_fraction, periods);
  split.num_users = log.user_count;
  split.num_items = log.item_count;
  split.user_attribute = log.user_attribute;
  return split;
}

std::vector<ItemId> sample_negatives(Rng& rng, int count, const std::vector<ItemId>& exclusion,
                                     int universe_size) {
  std::vector<ItemId> picked, scratch;
  sample_negatives_into(rng, count, exclusion, universe_size, picked, scratch);
  return picked;
}

void sample_negatives_into(Rng& rng, int count, const std::vector<ItemId>& exclusion,
                           int universe_size, std::vector<ItemId>& picked,
                           std::vector<ItemId>& scratch) {
  if (count < 0) throw SamplingError("sample_negatives: negative count");
  const auto excluded_in_universe = static_cast<int>(
      std::upper_bound(exclusion.begin(), exclusion.end(), universe_size - 1) - exclusion.begin());
  const int available = universe_size - excluded_in_universe;
  if (available < count) {
    throw SamplingError("sample_negatives: need " + std::to_string(count) + " items but only " +
                        std::to_string(available) + " are not excluded");
  }

  picked.clear();
  picked.reserve(static_cast<std::size_t>(count));
  if (count == 0) return;

  // Rejection sampling is uniform over subsets and fast when the exclusion
  // set is small relative to the universe; fall back to enumerating the
  // complement when most of the universe is excluded.
  if (available >= 2 * count) {
    if (count <= 16) {  // tiny draws: a linear duplicate scan beats sorted bookkeeping
      while (static_cast<int>(picked.size()) < count) {
        auto candidate = static_cast<ItemId>(rng.uniform_int(universe_size));
        if (std::binary_search(exclusion.begin(), exclusion.end(), candidate)) continue;
        bool duplicate = false;
        for (ItemId p : picked) {
          if (p == candidate) {
            duplicate = true;
            break;
          }
        }
        if (!duplicate) picked.push_back(candidate);
      }
      return;
    }
    scratch.clear();  // sorted view of what has been drawn so far
    while (static_cast<int>(picked.size()) < count) {
      auto candidate = static_cast<ItemId>(rng.uniform_int(universe_size));
      if (std::binary_search(exclusion.begin(), exclusion.end(), candidate)) continue;
      auto pos = std::lower_bound(scratch.begin(), scratch.end(), candidate);
      if (pos != scratch.end() && *pos == candidate) continue;
      scratch.insert(pos, candidate);
      picked.push_back(candidate);
    }
  } else {
    scratch.clear();
    scratch.reserve(static_cast<std::size_t>(available));
    std::size_t ex = 0;
    for (ItemId i = 0; i < universe_size; ++i) {
      while (ex < exclusion.size() && exclusion[ex] < i) ++ex;
      if (ex < exclusion.size() && exclusion[ex] == i) continue;
      scratch.push_back(i);
    }
    for (int k = 0; k < count; ++k) {  // partial Fisher-Yates
      int j = k + rng.uniform_int(static_cast<int>(scratch.size()) - k);
      std::swap(scratch[static_cast<std::size_t>(k)], scratch[static_cast<std::size_t>(j)]);
      picked.push_back(scratch[static_cast<std::size_t>(k)]);
    }
  }
}

PeriodDataset merge_periods(const std::vector<PeriodDataset>& periods, int first, int last) {
  if (first < 0 || last >= static_cast<int>(periods.size()) || first > last)
    throw ConfigError("merge_periods: bad range");
  PeriodDataset out;
  out.index = last;
  for (int t = first; t <= last; ++t) {
    const auto& p = periods[static_cast<std::size_t>(t)];
    out.positives.insert(out.positives.end(), p.positives.begin(), p.positives.end());
    out.users.insert(out.users.end(), p.users.begin(), p.users.end());
    out.items.insert(out.items.end(), p.items.begin(), p.items.end());
    for (const auto& [u, items] : p.per_user_positives) {
      auto& dst = out.per_user_positives[u];
      dst.insert(dst.end(), items.begin(), items.end());
    }
  }
  std::sort(out.users.begin(), out.users.end());
  out.users.erase(std::unique(out.users.begin(), out.users.end()), out.users.end());
  std::sort(out.items.begin(), out.items.end());
  out.items.erase(std::unique(out.items.begin(), out.items.end()), out.items.end());
  for (auto& [u, items] : out.per_user_positives) {
    std::sort(items.begin(), items.end());
    items.erase(std::unique(items.begin(), items.end()), items.end());
  }
  return out;
}

void write_id_maps(const InteractionLog& log, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  {
    std::ofstream f(out_dir + "/id_map_users.csv");
    f << "dense_id,original_id,attr\n";
    for (std::size_t u = 0; u < log.original_user_ids.size(); ++u)
      f << u << ',' << log.original_user_ids[u] << ',' << int(log.user_attribute[u]) << '\n';
  }
  {
    std::ofstream f(out_dir + "/id_map_items.csv");
    f << "dense_id,original_id\n";
    for (std::size_t i = 0; i < log.original_item_ids.size(); ++i)
      f << i << ',' << log.original_item_ids[i] << '\n';
  }
}

}  // namespace fade
