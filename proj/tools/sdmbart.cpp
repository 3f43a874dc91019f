// sdmbart command line: validate, run, predict, serve.

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "sdmbart/ascii_grid.hpp"
#include "sdmbart/bart/model_io.hpp"
#include "sdmbart/error.hpp"
#include "sdmbart/pipeline/config.hpp"
#include "sdmbart/pipeline/export.hpp"
#include "sdmbart/pipeline/pipeline.hpp"
#include "sdmbart/pipeline/validate.hpp"
#include "sdmbart/projection.hpp"
#include "sdmbart/service.hpp"

namespace fs = std::filesystem;
using namespace sdm;

namespace {

constexpr int kOk = 0;
constexpr int kInvalid = 1;
constexpr int kFailure = 2;

struct Flags {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::optional<std::string> output;
  bool quiet = false;
};

void print_table(const pipeline::ValidationTable& table, bool quiet) {
  for (const auto& r : table.rows) {
    if (quiet && r.status == pipeline::Status::ok) continue;
    std::cout << pipeline::to_string(r.status) << '\t' << r.item << '\t' << r.check;
    if (!r.message.empty()) std::cout << '\t' << r.message;
    std::cout << '\n';
  }
  std::cout << table.count(pipeline::Status::error) << " errors, " << table.count(pipeline::Status::warning)
            << " warnings\n";
}

pipeline::AnalysisConfig configured(const std::string& path, const Flags& flags) {
  auto cfg = pipeline::load_config(path);
  if (flags.seed) cfg.seed = *flags.seed;
  if (flags.workers) cfg.workers = std::max<std::size_t>(1, *flags.workers);
  if (flags.output) cfg.output = fs::absolute(*flags.output);
  return cfg;
}

int cmd_validate(const std::string& config, const Flags& flags) {
  pipeline::AnalysisConfig cfg;
  try {
    cfg = configured(config, flags);
  } catch (const Error& e) {
    std::cerr << e.what() << '\n';
    return kInvalid;
  }
  const auto table = pipeline::validate_inputs(cfg);
  print_table(table, flags.quiet);
  return table.has_errors() ? kInvalid : kOk;
}

int cmd_run(const std::string& config, const Flags& flags) {
  pipeline::AnalysisConfig cfg;
  try {
    cfg = configured(config, flags);
  } catch (const Error& e) {
    std::cerr << e.what() << '\n';
    return kInvalid;
  }
  const auto table = pipeline::validate_inputs(cfg);
  if (table.has_errors()) {
    print_table(table, true);
    return kInvalid;
  }
  try {
    auto progress = [&](const std::string& species, const std::string& stage, double fraction) {
      if (!flags.quiet) std::cerr << '[' << static_cast<int>(fraction * 100.0 + 0.5) << "%] " << species << ' ' << stage << '\n';
    };
    const auto bundle = pipeline::run_analysis(cfg, progress);
    const auto out = cfg.resolve(cfg.output);
    const auto manifest = pipeline::export_results(bundle, out);
    std::size_t failed = 0;
    for (const auto& s : bundle.species) {
      if (!s.failure) continue;
      ++failed;
      std::cerr << s.name << ": failed at " << s.failure->stage << " (" << s.failure->kind << "): " << s.failure->message
                << '\n';
    }
    if (!flags.quiet) std::cout << manifest.files.size() << " files written to " << out.string() << '\n';
    return failed ? kFailure : kOk;
  } catch (const std::exception& e) {
    std::cerr << "run failed: " << e.what() << '\n';
    return kFailure;
  }
}

int cmd_predict(const std::string& model_path, const std::string& stack_dir, std::optional<double> cutoff,
                const Flags& flags) {
  try {
    const auto model = bart::load_model(fs::path(model_path));
    const double threshold = cutoff ? *cutoff : model.cutoff.value_or(0.5);
    if (!cutoff && !model.cutoff && !flags.quiet) std::cerr << "model has no cutoff; using 0.5\n";
    RasterStack stack;
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(stack_dir)) {
      if (entry.is_regular_file() && entry.path().extension() == ".asc") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) stack.add(f.stem().string(), load_ascii_grid(f));
    const auto prediction = predict_stack(model, stack, threshold, flags.workers.value_or(1));
    const fs::path out = flags.output.value_or(".");
    fs::create_directories(out);
    for (const auto& name : summary_names()) write_ascii_grid(out / ("prediction_" + name + ".asc"), prediction.summary(name));
    if (!flags.quiet) std::cout << "wrote " << summary_names().size() << " rasters to " << out.string() << '\n';
    return kOk;
  } catch (const std::exception& e) {
    std::cerr << "predict failed: " << e.what() << '\n';
    return kFailure;
  }
}

httplib::Server* g_server = nullptr;

int cmd_serve(const std::string& settings_path, const Flags& flags) {
  nlohmann::json settings;
  try {
    std::ifstream in(settings_path);
    if (!in) throw Error(ErrorKind::io, "cannot open '" + settings_path + "'");
    settings = nlohmann::json::parse(in);
    pipeline::detail::check_keys(settings, "service settings", {"host", "port", "workspace", "workers", "static_dir"});
  } catch (const std::exception& e) {
    std::cerr << e.what() << '\n';
    return kInvalid;
  }
  const fs::path base = fs::path(settings_path).parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
  const auto host = settings.value("host", std::string("127.0.0.1"));
  const int port = settings.value("port", 8080);
  const auto workspace = flags.output ? fs::path(*flags.output) : resolve(settings.value("workspace", std::string("jobs")));
  const std::size_t workers = flags.workers.value_or(settings.value("workers", std::size_t{1}));
  try {
    service::JobService jobs(workspace, workers);
    httplib::Server server;
    jobs.register_routes(server);
    if (settings.contains("static_dir")) server.set_mount_point("/", resolve(settings.at("static_dir").get<std::string>()).string());
    g_server = &server;
    std::signal(SIGINT, [](int) { if (g_server) g_server->stop(); });
    std::signal(SIGTERM, [](int) { if (g_server) g_server->stop(); });
    if (!flags.quiet) std::cerr << "listening on " << host << ':' << port << ", workspace " << workspace.string() << '\n';
    if (!server.listen(host, port)) {
      std::cerr << "cannot listen on " << host << ':' << port << '\n';
      return kFailure;
    }
    g_server = nullptr;
    return kOk;
  } catch (const std::exception& e) {
    std::cerr << "serve failed: " << e.what() << '\n';
    return kFailure;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BART species distribution modelling"};
  app.require_subcommand(1);
  Flags flags;
  app.add_option("--seed", flags.seed, "Global seed (overrides the config)");
  app.add_option("--workers", flags.workers, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--output", flags.output, "Output directory");
  app.add_flag("--quiet", flags.quiet, "Only print problems");
  app.fallthrough();

  std::string config;
  auto* validate = app.add_subcommand("validate", "Check every input referenced by a config");
  validate->add_option("config", config, "Analysis config (JSON)")->required();
  auto* run = app.add_subcommand("run", "Run the analysis and export results");
  run->add_option("config", config, "Analysis config (JSON)")->required();

  std::string model_path;
  std::string stack_dir;
  std::optional<double> cutoff;
  auto* predict = app.add_subcommand("predict", "Predict a directory of .asc layers with a saved model");
  predict->add_option("model", model_path, "Model artifact")->required();
  predict->add_option("stack-dir", stack_dir, "Directory of <variable>.asc layers")->required();
  predict->add_option("--cutoff", cutoff, "Binary cutoff (default: the model's)");

  auto* serve = app.add_subcommand("serve", "Start the HTTP job service");
  serve->add_option("config", config, "Service settings (JSON)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kInvalid;
  }
  if (*validate) return cmd_validate(config, flags);
  if (*run) return cmd_run(config, flags);
  if (*predict) return cmd_predict(model_path, stack_dir, cutoff, flags);
  return cmd_serve(config, flags);
}
