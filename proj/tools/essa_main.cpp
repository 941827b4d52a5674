// Command-line front end: dataset synthesis, the three adaptation stages,
// evaluation, and report aggregation. One command per process; exit codes:
// 0 success, 2 config error, 3 data/format error, 4 contract violation.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "essa/checkpoint.hpp"
#include "essa/config.hpp"
#include "essa/data.hpp"
#include "essa/errors.hpp"
#include "essa/eval.hpp"
#include "essa/metrics_log.hpp"
#include "essa/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

struct StageCliArgs {
  std::string config_path;
  std::string resume_path;
  std::string out_path;
  std::string log_path;
  int stop_after = 0;
};

void add_stage_options(CLI::App* cmd, StageCliArgs& args) {
  cmd->add_option("--config", args.config_path, "run configuration file")
      ->required();
  cmd->add_option("--resume", args.resume_path,
                  "checkpoint to continue from (a partial run of this stage "
                  "or a previous stage's result)");
  cmd->add_option("--out", args.out_path, "output checkpoint path")
      ->required();
  cmd->add_option("--log", args.log_path,
                  "metrics log path (default: <out>.metrics.jsonl)");
  cmd->add_option("--stop-after", args.stop_after,
                  "stop after this many total epochs (for resumable runs)");
}

essa::RunState open_state(const StageCliArgs& args,
                          const essa::RunConfig& config) {
  if (!args.resume_path.empty()) {
    essa::RunState state = essa::load_checkpoint(args.resume_path);
    if (state.preset != config.preset) {
      throw essa::ConfigError("resume checkpoint preset '" + state.preset +
                              "' does not match config preset '" +
                              config.preset + "'");
    }
    return state;
  }
  return essa::init_run_state(config.preset, config.seed);
}

essa::Dataset load_stage_dataset(const essa::RunConfig& config,
                                 essa::Stage stage) {
  const fs::path path = config.stage_dataset(stage);
  if (path.empty()) {
    throw essa::ConfigError("config has no dataset for stage [" +
                            essa::stage_name(stage) + "]");
  }
  return essa::load_dataset(path);
}

int run_stage_command(essa::Stage stage, const StageCliArgs& args) {
  const essa::RunConfig config = essa::parse_run_config(args.config_path);
  essa::RunState state = open_state(args, config);
  essa::Dataset data = load_stage_dataset(config, stage);

  const fs::path log_path = args.log_path.empty()
                                ? fs::path(args.out_path + ".metrics.jsonl")
                                : fs::path(args.log_path);
  const auto on_epoch = [&](const essa::EpochRecord& record) {
    essa::append_metric_record(log_path, essa::record_from_epoch(record));
  };

  switch (stage) {
    case essa::Stage::essa:
      essa::run_essa(state, data, config.essa, on_epoch, args.stop_after);
      break;
    case essa::Stage::sa:
      essa::run_sa(state, data, config.sa, on_epoch, args.stop_after);
      break;
    case essa::Stage::ttt:
      essa::run_ttt(state, data, config.ttt, on_epoch, args.stop_after);
      break;
    default:
      throw essa::ContractError("unexpected stage");
  }
  essa::save_checkpoint(state, args.out_path);
  std::cout << "wrote " << args.out_path << " (stage "
            << essa::stage_name(state.stage) << ", epoch " << state.epoch
            << (state.completed ? ", completed" : ", partial") << ")\n";
  return 0;
}

int run_synth(const std::string& spec_path, const std::string& out_dir) {
  const essa::SynthSpec spec = essa::parse_synth_spec(spec_path);
  fs::create_directories(out_dir);
  if (spec.shift_strength == 0.0) {
    std::cerr << "warning: shift_strength=0, target files will be "
                 "byte-identical to source files\n";
  }
  for (essa::Split split :
       {essa::Split::train, essa::Split::val, essa::Split::test}) {
    for (essa::Domain domain : {essa::Domain::source, essa::Domain::target}) {
      essa::Dataset dataset = essa::generate(spec, split, domain);
      const fs::path path =
          fs::path(out_dir) / essa::dataset_filename(spec.name, split, domain);
      essa::save_dataset(dataset, path);
      std::cout << path.string() << ": " << dataset.count() << " samples\n";
    }
  }
  return 0;
}

int run_eval(const std::string& ckpt_path, const std::string& config_path,
             const std::string& protocol, const std::string& log_path) {
  const essa::RunConfig config = essa::parse_run_config(config_path);
  essa::RunState state = essa::load_checkpoint(ckpt_path);
  if (state.preset != config.preset) {
    throw essa::ConfigError("checkpoint preset '" + state.preset +
                            "' does not match config preset '" +
                            config.preset + "'");
  }
  if (config.eval_gallery.empty() || config.eval_query.empty()) {
    throw essa::ConfigError("[eval] gallery and query datasets are required");
  }
  essa::Dataset gallery = essa::load_dataset(config.eval_gallery);
  essa::Dataset query = essa::load_dataset(config.eval_query);
  const essa::AdapterContext ctx = state.forward_ctx();

  double value = 0.0;
  if (protocol == "knn") {
    value = essa::evaluate_knn_protocol(state.config, state.backbone, &ctx,
                                        gallery, query, config.eval_k,
                                        config.eval_tau, config.eval_metric);
  } else {  // head
    if (!state.head) {
      throw essa::ContractError(
          "eval --protocol head: checkpoint has no trained prediction head");
    }
    if (!query.labeled) {
      throw essa::DataError("eval --protocol head: labels required");
    }
    essa::ConfusionMatrix cm(
        std::max<std::size_t>(state.head->num_classes, query.num_classes()));
    std::vector<double> auc_scores;
    std::vector<int> auc_labels;
    for (std::size_t i = 0; i < query.count(); ++i) {
      const auto embedding = essa::embed_image(state.config, state.backbone,
                                               &ctx, query.image(i));
      essa::NoGradScope no_grad;
      essa::Tensor logits = essa::prediction_head_forward(
          *state.head, essa::Tensor::from_data({1, embedding.size()},
                                               embedding));
      std::size_t best = 0;
      for (std::size_t c = 1; c < state.head->num_classes; ++c) {
        if (logits.at(c) > logits.at(best)) best = c;
      }
      cm.at(query.label(i), best)++;
      if (config.eval_metric == essa::EvalMetric::auc) {
        auc_scores.push_back(logits.at(1) - logits.at(0));
        auc_labels.push_back(query.label(i) != 0 ? 1 : 0);
      }
    }
    switch (config.eval_metric) {
      case essa::EvalMetric::accuracy:
        value = essa::accuracy(cm);
        break;
      case essa::EvalMetric::kappa:
        value = essa::quadratic_kappa(cm).value;
        break;
      case essa::EvalMetric::auc:
        value = essa::roc_auc(auc_scores, auc_labels);
        break;
    }
  }

  essa::MetricRecord record;
  record.stage = "eval-" + protocol;
  record.adapter = state.stage_adapter.empty() ? state.injection_spec.name()
                                               : state.stage_adapter;
  record.metric = essa::metric_name(config.eval_metric);
  record.value = value;
  std::cout << essa::to_json_line(record) << "\n";
  if (!log_path.empty()) essa::append_metric_record(log_path, record);
  return 0;
}

int run_report(const std::string& logs_dir, const std::string& out_path) {
  const auto rows = essa::aggregate_reports(logs_dir);
  essa::write_report_csv(rows, out_path);
  std::cout << "wrote " << out_path << " (" << rows.size() << " rows)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Efficient self-supervised adaptation workbench"};
  app.require_subcommand(1);

  // synth
  std::string synth_spec, synth_out;
  CLI::App* synth = app.add_subcommand("synth", "generate synthetic datasets");
  synth->add_option("--spec", synth_spec, "generator spec file")->required();
  synth->add_option("--out", synth_out, "output directory")->required();

  // adapt / finetune / ttt
  StageCliArgs adapt_args, finetune_args, ttt_args;
  CLI::App* adapt = app.add_subcommand(
      "adapt", "self-supervised adaptation under the [essa] stage config");
  add_stage_options(adapt, adapt_args);
  CLI::App* finetune = app.add_subcommand(
      "finetune", "supervised fine-tuning under the [sa] stage config");
  add_stage_options(finetune, finetune_args);
  CLI::App* ttt = app.add_subcommand(
      "ttt", "test-time training under the [ttt] stage config");
  add_stage_options(ttt, ttt_args);

  // eval
  std::string eval_ckpt, eval_config, eval_protocol = "knn", eval_log;
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--ckpt", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--config", eval_config, "run configuration file")
      ->required();
  eval->add_option("--protocol", eval_protocol, "knn|head")
      ->check(CLI::IsMember({"knn", "head"}));
  eval->add_option("--log", eval_log, "append the result to this jsonl log");

  // report
  std::string report_logs, report_out;
  CLI::App* report =
      app.add_subcommand("report", "aggregate metric logs into a CSV");
  report->add_option("--logs", report_logs, "directory of .jsonl logs")
      ->required();
  report->add_option("--out", report_out, "output CSV path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  try {
    if (synth->parsed()) return run_synth(synth_spec, synth_out);
    if (adapt->parsed()) return run_stage_command(essa::Stage::essa, adapt_args);
    if (finetune->parsed())
      return run_stage_command(essa::Stage::sa, finetune_args);
    if (ttt->parsed()) return run_stage_command(essa::Stage::ttt, ttt_args);
    if (eval->parsed())
      return run_eval(eval_ckpt, eval_config, eval_protocol, eval_log);
    if (report->parsed()) return run_report(report_logs, report_out);
  } catch (const essa::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const essa::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const essa::ContractError& e) {
    std::cerr << "contract violation: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
