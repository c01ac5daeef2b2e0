#include "flex/cli.hpp"

#include <atomic>
#include <csignal>
#include <iostream>

#include "CLI11.hpp"

#include "flex/annotation_service.hpp"
#include "flex/errors.hpp"
#include "flex/io.hpp"
#include "flex/manifest.hpp"
#include "flex/pipeline.hpp"

namespace flex::cli {

namespace {

std::atomic<AnnotationServer*> g_server{nullptr};

void on_signal(int) {
  if (auto* s = g_server.load()) s->stop();
}

PipelineConfig config_at(const std::string& path) {
  return path.empty() ? config_from_json(nlohmann::json::object()) : load_config(path);
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"flex: explanation-driven prompt repair for frozen language models", "flex"};
  app.require_subcommand(1);
  std::string config_path;
  std::string run_dir = "run";
  app.add_option("-c,--config", config_path, "pipeline configuration (JSON)");
  app.add_option("-r,--run-dir", run_dir, "run directory holding the artifacts")->capture_default_str();

  auto* collect = app.add_subcommand("collect-errors", "run CoT on the train split and collect the error set");

  auto* cluster = app.add_subcommand("cluster", "embed and cluster the error set");
  std::string selection = "kmeans";
  std::optional<int> k;
  cluster->add_option("--selection", selection, "kmeans | random | task_type")->capture_default_str();
  cluster->add_option("--k", k, "fixed k (kmeans) or number of random picks");

  auto* serve = app.add_subcommand("serve", "serve the annotation API");
  ServiceOptions service;
  serve->add_option("--host", service.host)->capture_default_str();
  serve->add_option("--port", service.port)->capture_default_str();
  serve->add_option("--token", service.token, "shared bearer token");

  auto* verify = app.add_subcommand("verify-batch", "verify scripted explanation drafts");
  std::string mode = "human";
  std::string drafts;
  verify->add_option("--mode", mode, "human | auto | solution")->capture_default_str();
  verify->add_option("--drafts", drafts, "JSONL of {case_id, explanation} drafts (human mode)");

  auto* summarize = app.add_subcommand("summarize", "sample candidate summaries from the explanations");
  bool raw = false;
  summarize->add_flag("--raw", raw, "use the concatenated explanations as the summary");

  auto* select = app.add_subcommand("select", "score candidates and select the summary");
  std::string weighting = "cluster_weighted", rank = "best";
  select->add_option("--weighting", weighting, "cluster_weighted | unweighted")->capture_default_str();
  select->add_option("--rank", rank, "best | median | worst")->capture_default_str();

  auto* evaluate = app.add_subcommand("evaluate", "evaluate a method on the test split");
  std::string method = "cot";
  bool stacked = false;
  std::string summary_path;
  evaluate->add_option("--method", method, "cot | flex | self_refine | rag | self_consistency")->capture_default_str();
  evaluate->add_flag("--stacked", stacked, "add the selected summary to the method's system prompts");
  evaluate->add_option("--summary", summary_path, "summary file (default: the run's summary.json)");

  auto* transfer = app.add_subcommand("transfer", "evaluate a summary produced by another run");
  std::string transfer_summary, source;
  transfer->add_option("--summary", transfer_summary, "summary.json from the source run")->required();
  transfer->add_option("--source", source, "label of the source model");

  auto* report = app.add_subcommand("report", "render comparison tables from stored reports");

  auto* prompts = app.add_subcommand("write-prompts", "write the built-in summary prompts to a directory");
  std::string prompts_out;
  prompts->add_option("dir", prompts_out)->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    const fs::path dir(run_dir);
    if (*prompts) {
      const auto defaults = default_summary_prompts();
      write_summary_prompts(prompts_out, defaults);
      out << "wrote " << defaults.size() << " prompts to " << prompts_out << "\n";
      return 0;
    }
    if (*report) {
      out << stage_report(dir);
      return 0;
    }
    if (*summarize && raw) {
      const auto s = stage_raw_summary(dir);
      out << "raw summary: " << count_tokens(s.text) << " tokens\n";
      return 0;
    }

    const PipelineConfig config = config_at(config_path);
    BackendPool pool(config);

    if (*collect) {
      const auto r = stage_collect(dir, config, pool);
      out << "errors: " << r.errors << " of " << r.train << " training instances\n";
    } else if (*cluster) {
      const auto sel = stage_cluster(dir, config, pool, {parse_selection_strategy(selection), k});
      out << "k* = " << sel.k_star << " (" << sel.strategy << ")\n";
      for (const auto& c : sel.clusters)
        out << "  cluster " << c.index << ": size " << c.size << ", weight " << c.weight << ", representative "
            << (c.candidates.empty() ? "-" : c.candidates.front()) << "\n";
    } else if (*serve) {
      const std::string started = utc_timestamp();
      auto store = open_annotation_store(dir, config, pool);
      service.scores_path = dir / artifacts::kScores;
      {
        RunLock lock(dir);
        AnnotationServer server(*store, service);
        g_server.store(&server);
        auto prev_int = std::signal(SIGINT, on_signal);
        auto prev_term = std::signal(SIGTERM, on_signal);
        server.run();
        g_server.store(nullptr);
        std::signal(SIGINT, prev_int);
        std::signal(SIGTERM, prev_term);
      }
      record_annotation_manifest(dir, config, pool, "serve", started);
      out << "annotation state saved in " << dir.string() << "\n";
    } else if (*verify) {
      const auto outcome = stage_verify_batch(dir, config, pool, {parse_explanation_mode(mode), drafts});
      out << "explanations: " << outcome.verified.size();
      if (!outcome.exhausted_clusters.empty()) out << ", exhausted clusters: " << outcome.exhausted_clusters.size();
      out << "\n";
    } else if (*summarize) {
      const auto batch = stage_summarize(dir, config, pool);
      out << "candidates: " << batch.candidates.size() << "\n";
      for (const auto& p : batch.incomplete_prompts) out << "  incomplete prompt: " << p << "\n";
    } else if (*select) {
      const auto s = stage_select(dir, config, pool, {parse_weighting(weighting), parse_rank(rank)});
      out << "selected l = " << s.index << ", J = " << s.score << ", " << count_tokens(s.text) << " tokens\n";
    } else if (*evaluate) {
      EvaluateStageOptions opts{parse_method(method), stacked, std::nullopt};
      if (!summary_path.empty()) opts.summary_path = fs::path(summary_path);
      const auto r = stage_evaluate(dir, config, pool, opts);
      out << render_table(std::span(&r.report, 1));
    } else if (*transfer) {
      const auto r = stage_transfer(dir, config, pool, {transfer_summary, source});
      out << render_table(std::span(&r.report, 1));
    }
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

int dispatch(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return dispatch(args, std::cout, std::cerr);
}

}  // namespace flex::cli
