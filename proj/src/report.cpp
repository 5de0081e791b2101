#include "fictplay/report.hpp"

#include <cstdio>
#include <fstream>

#include "fictplay/binary_io.hpp"
#include "fictplay/errors.hpp"

namespace fictplay {

std::string metrics_csv_header() { return "iter,split,clean_acc,adv_acc,attack,seconds"; }

std::string format_metrics_row(const MetricsRow& row) {
  if (!(row.clean_acc >= 0 && row.clean_acc <= 1) || !(row.adv_acc >= 0 && row.adv_acc <= 1))
    throw NumericError("metrics: accuracy outside [0,1]");
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%s,%.6f,%.6f,%s,%.3f", row.iteration, split_name(row.split), row.clean_acc,
                row.adv_acc, row.attack.c_str(), row.seconds);
  return buf;
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string out = metrics_csv_header() + "\n";
  for (const auto& r : rows) out += format_metrics_row(r) + "\n";
  return out;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  auto os = io::open_out(path);
  const std::string text = metrics_csv(rows);
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!os) throw IoError("failed writing '" + path + "'");
}

}  // namespace fictplay
