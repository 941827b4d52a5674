#include "essa/metrics_log.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "json.hpp"

#include "essa/errors.hpp"

namespace essa {

using nlohmann::json;

MetricRecord record_from_epoch(const EpochRecord& e) {
  MetricRecord r;
  r.stage = e.stage;
  r.epoch = e.epoch;
  r.loss = e.loss;
  r.lr = e.lr;
  r.steps_per_sec = e.steps_per_sec;
  r.trainable_fraction = e.trainable_fraction;
  r.trainable_count = e.trainable_count;
  r.adapter = e.adapter;
  return r;
}

std::string to_json_line(const MetricRecord& r) {
  json j{{"stage", r.stage},
         {"epoch", r.epoch},
         {"loss", r.loss},
         {"lr", r.lr},
         {"steps_per_sec", r.steps_per_sec},
         {"trainable_fraction", r.trainable_fraction},
         {"trainable_count", r.trainable_count},
         {"adapter", r.adapter}};
  if (!r.metric.empty()) {
    j["metric"] = r.metric;
    j["value"] = r.value;
  }
  return j.dump();
}

void append_metric_record(const std::filesystem::path& log_path,
                          const MetricRecord& record) {
  std::ofstream file(log_path, std::ios::app);
  if (!file) {
    throw DataError("cannot open metrics log '" + log_path.string() + "'");
  }
  file << to_json_line(record) << "\n";
}

std::vector<MetricRecord> read_metric_log(const std::filesystem::path& path) {
  std::ifstream file(path);
  if (!file) throw DataError("cannot open metrics log '" + path.string() + "'");
  std::vector<MetricRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(file, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      throw DataError(path.string() + ":" + std::to_string(line_no) +
                      ": malformed metric record");
    }
    try {
      MetricRecord r;
      r.stage = j.at("stage").get<std::string>();
      r.epoch = j.value("epoch", 0);
      r.loss = j.value("loss", 0.0);
      r.lr = j.value("lr", 0.0);
      r.steps_per_sec = j.value("steps_per_sec", 0.0);
      r.trainable_fraction = j.value("trainable_fraction", 0.0);
      r.trainable_count = j.value("trainable_count", std::size_t{0});
      r.adapter = j.value("adapter", std::string{});
      r.metric = j.value("metric", std::string{});
      r.value = j.value("value", 0.0);
      records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " +
                      e.what());
    }
  }
  return records;
}

std::vector<ReportRow> aggregate_reports(
    const std::filesystem::path& logs_dir) {
  std::vector<std::filesystem::path> files;
  if (!std::filesystem::is_directory(logs_dir)) {
    throw DataError("report: '" + logs_dir.string() + "' is not a directory");
  }
  for (const auto& entry : std::filesystem::directory_iterator(logs_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".jsonl") {
      files.push_back(entry.path());
    }
  }
  if (files.empty()) {
    throw DataError("report: no .jsonl metric logs under '" +
                    logs_dir.string() + "'");
  }
  std::sort(files.begin(), files.end());

  struct Group {
    bool has_last = false;
    MetricRecord last;
    double steps_sum = 0.0;
    std::size_t steps_n = 0;
  };
  std::map<std::pair<std::string, std::string>, Group> groups;
  for (const auto& file : files) {
    for (const MetricRecord& r : read_metric_log(file)) {
      auto& g = groups[{r.adapter, r.stage}];
      if (!g.has_last || r.epoch >= g.last.epoch) {
        g.last = r;
        g.has_last = true;
      }
      if (r.steps_per_sec > 0) {
        g.steps_sum += r.steps_per_sec;
        ++g.steps_n;
      }
    }
  }

  std::vector<ReportRow> rows;
  for (const auto& [key, g] : groups) {
    ReportRow row;
    row.adapter = key.first;
    row.stage = key.second;
    row.final_metric = g.last.metric.empty() ? g.last.loss : g.last.value;
    row.trainable_fraction = g.last.trainable_fraction;
    row.optimizer_state_bytes = g.last.trainable_count * 16;
    row.mean_steps_per_sec = g.steps_n > 0 ? g.steps_sum / g.steps_n : 0.0;
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_report_csv(const std::vector<ReportRow>& rows,
                      const std::filesystem::path& out_path) {
  std::ofstream file(out_path, std::ios::trunc);
  if (!file) {
    throw DataError("report: cannot open '" + out_path.string() +
                    "' for writing");
  }
  file << "adapter,stage,final_metric,trainable_fraction,"
          "optimizer_state_bytes,mean_steps_per_sec\n";
  for (const ReportRow& r : rows) {
    file << r.adapter << ',' << r.stage << ',' << r.final_metric << ','
         << r.trainable_fraction << ',' << r.optimizer_state_bytes << ','
         << r.mean_steps_per_sec << "\n";
  }
}

}  // namespace essa
