#pragma once

#include <string>
#include <vector>

#include "fictplay/data.hpp"

namespace fictplay {

/// One measurement of a classifier at the end of an outer iteration.
struct MetricsRow {
  int iteration = 0;
  Split split = Split::Train;
  double clean_acc = 0;
  double adv_acc = 0;
  std::string attack;  // "universal", "patch" or "none"
  double seconds = 0;

  friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

/// "iter,split,clean_acc,adv_acc,attack,seconds"
std::string metrics_csv_header();

/// Accuracies with 6 fixed decimals, seconds with 3, no trailing newline.
std::string format_metrics_row(const MetricsRow& row);

/// Header plus one LF-terminated line per row.
std::string metrics_csv(const std::vector<MetricsRow>& rows);

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);

}  // namespace fictplay
