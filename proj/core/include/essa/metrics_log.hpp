#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "essa/pipeline.hpp"

namespace essa {

/// One JSON-lines metric record. Training stages emit one per epoch; eval
/// emits a single record with the protocol metric.
struct MetricRecord {
  std::string stage;
  int epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
  double steps_per_sec = 0.0;
  double trainable_fraction = 0.0;
  std::size_t trainable_count = 0;
  std::string adapter;
  // eval-only fields
  std::string metric;  // empty for training records
  double value = 0.0;
};

MetricRecord record_from_epoch(const EpochRecord& epoch_record);

std::string to_json_line(const MetricRecord& record);

/// Appends one JSON line; creates the file if needed.
void append_metric_record(const std::filesystem::path& log_path,
                          const MetricRecord& record);

/// Parses a metrics file; malformed lines raise DataError with file:line.
std::vector<MetricRecord> read_metric_log(const std::filesystem::path& path);

struct ReportRow {
  std::string adapter;
  std::string stage;
  double final_metric = 0.0;
  double trainable_fraction = 0.0;
  std::size_t optimizer_state_bytes = 0;
  double mean_steps_per_sec = 0.0;
};

/// Aggregates every *.jsonl under logs_dir into one row per
/// (adapter, stage): the final metric (last epoch's loss, or the eval
/// value), the trainable fraction, optimizer bytes (trainable_count * 16),
/// and mean steps/sec.
std::vector<ReportRow> aggregate_reports(
    const std::filesystem::path& logs_dir);

void write_report_csv(const std::vector<ReportRow>& rows,
                      const std::filesystem::path& out_path);

}  // namespace essa
