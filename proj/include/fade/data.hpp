#pragma once

#include <cstdint>
#include <istream>
#include <string>
#include <unordered_map>
#include <vector>

#include "fade/rng.hpp"

namespace fade {

using UserId = std::int32_t;
using ItemId = std::int32_t;

struct InteractionRecord {
  UserId user = 0;
  ItemId item = 0;
  int rating = 0;
  std::int64_t timestamp = 0;
  std::uint8_t attribute = 0;  // binary group label, 0 = advantaged
};

// Parsed interaction stream with dense 0-based ids. Remap tables keep the
// original ids so reports can name them.
struct InteractionLog {
  std::vector<InteractionRecord> records;
  int user_count = 0;
  int item_count = 0;
  std::vector<std::int64_t> original_user_ids;  // dense id -> source id
  std::vector<std::int64_t> original_item_ids;
  std::vector<std::uint8_t> user_attribute;  // dense user id -> group label
};

// One time period's slice of the log.
struct PeriodDataset {
  int index = 0;
  std::vector<UserId> users;  // sorted, distinct
  std::vector<ItemId> items;  // sorted, distinct
  std::vector<std::pair<UserId, ItemId>> positives;
  // user -> sorted distinct positive items within this period
  std::unordered_map<UserId, std::vector<ItemId>> per_user_positives;

  std::size_t size() const { return positives.size(); }
  bool user_has_positive(UserId u, ItemId i) const;
};

// Temporal split plus the global context every consumer needs: table sizes
// for the full id space and the per-user group labels.
struct SplitDataset {
  std::vector<PeriodDataset> periods;  // periods[0] is the pretrain slice
  int num_users = 0;
  int num_items = 0;
  std::vector<std::uint8_t> user_attribute;

  int dynamic_periods() const { return static_cast<int>(periods.size()) - 1; }
};

enum class LogFormat { MovielensDat, Csv };

// Gender letter mapping for MovieLens users.dat. Paper setup: F -> 1, M -> 0.
struct AttributeMapping {
  char group1_code = 'F';
  char group0_code = 'M';
};

InteractionLog parse_interactions(std::istream& source, LogFormat format,
                                  std::istream& attribute_source,
                                  const AttributeMapping& mapping = {});

InteractionLog parse_interactions_files(const std::string& data_path, LogFormat format,
                                        const std::string& attrs_path,
                                        const AttributeMapping& mapping = {});

// Keeps exactly the records with rating > threshold; ids and counts unchanged.
InteractionLog binarize(const InteractionLog& log, int threshold);

// Stable-sorts by timestamp, takes floor(pretrain_fraction*N) records as
// period 0 and splits the next floor(dynamic_fraction*N) records into T
// contiguous periods whose sizes differ by at most one (earlier periods get
// the remainder). Trailing records are discarded.
std::vector<PeriodDataset> temporal_split(const InteractionLog& log, double pretrain_fraction,
                                          double dynamic_fraction, int periods);

SplitDataset build_split(const InteractionLog& log, double pretrain_fraction,
                         double dynamic_fraction, int periods);

// `count` distinct items drawn uniformly from [0, universe_size) minus
// `exclusion` (which must be sorted ascending).
std::vector<ItemId> sample_negatives(Rng& rng, int count, const std::vector<ItemId>& exclusion,
                                     int universe_size);

// Same draw written into a caller-owned buffer (hot-path variant).
void sample_negatives_into(Rng& rng, int count, const std::vector<ItemId>& exclusion,
                           int universe_size, std::vector<ItemId>& out,
                           std::vector<ItemId>& scratch);

// Merge of contiguous periods [first, last] into one dataset, used by the
// retraining strategies.
PeriodDataset merge_periods(const std::vector<PeriodDataset>& periods, int first, int last);

void write_id_maps(const InteractionLog& log, const std::string& out_dir);

}  // namespace fade
