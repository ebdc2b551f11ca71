// choquard_cli <mode> --config <path> [--out <dir>] [--seed <u64>] [--threads <n>]
//
// Exit codes: 0 success, 2 config error, 3 solver failure, 4 validation
// failure. Failures leave error.json in the output directory.

#include <CLI11.hpp>

#include <choquard/cli.hpp>

#include <iostream>
#include <optional>

namespace cli = choquard::cli;

namespace {

int report_error(const choquard::Error &e, int code, const std::string &out_dir,
                 const std::optional<cli::RunConfig> &cfg,
                 const std::string &error_name) {
  std::cerr << "error: " << e.what() << "\n";
  try {
    std::filesystem::create_directories(out_dir);
    cli::write_text(std::filesystem::path(out_dir) / error_name,
                    cli::error_record(e.code(), e.detail(), code, cfg).dump(2) + "\n");
  } catch (const std::exception &w) {
    std::cerr << "error: could not write the error record: " << w.what() << "\n";
  }
  return code;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Normalized solutions of the linearly coupled Choquard system"};
  app.require_subcommand(1);
  std::string config_path;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;

  const char *modes[] = {"minimize", "saddle", "scan", "check", "oracle"};
  const char *blurbs[] = {
      "constrained minimization (subcritical regime)",
      "mountain-pass solve through the fiber map (supercritical, p = q)",
      "mass scan of the minimization problem",
      "run the parameter validators and the geometry check",
      "compare the fast Riesz convolution with the direct-sum oracle"};
  for (int k = 0; k < 5; ++k) {
    CLI::App *sub = app.add_subcommand(modes[k], blurbs[k]);
    sub->add_option("--config", config_path, "JSON config file")->required();
    sub->add_option("--out", out_dir, "output directory (overrides output.dir)");
    sub->add_option("--seed", seed, "random seed (overrides seed)");
    sub->add_option("--threads", threads, "worker threads (overrides threads)")
        ->check(CLI::PositiveNumber);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    app.exit(e);
    return cli::exit_config;
  }
  const std::string mode = app.get_subcommands().front()->get_name();

  std::optional<cli::RunConfig> cfg;
  try {
    cli::json j = cli::read_json_file(config_path);
    // Command-line overrides are applied before validation and echoed.
    if (j.is_object()) {
      if (out_dir)
        j["output"]["dir"] = *out_dir;
      if (seed)
        j["seed"] = *seed;
      if (threads)
        j["threads"] = *threads;
    }
    cfg = cli::parse_config_json(j);
    choquard::require(mode == cli::to_string(cfg->mode),
                      choquard::ErrorCode::SchemaError,
                      "mode: config says \"" + std::string(cli::to_string(cfg->mode)) +
                          "\" but the subcommand is \"" + mode + "\"");
  } catch (const choquard::Error &e) {
    return report_error(e, cli::exit_config, out_dir.value_or("out"), std::nullopt,
                        "error.json");
  }

  try {
    const cli::RunResult r = cli::run(*cfg);
    cli::write_outputs(*cfg, r);
    std::cout << cli::to_string(cfg->mode) << ": " << r.report.at("status").get<std::string>()
              << " (report in " << cfg->output.dir << "/" << cfg->output.report << ")\n";
    return r.exit_code;
  } catch (const choquard::Error &e) {
    return report_error(e, cli::exit_code_for(e.code()), cfg->output.dir, cfg,
                        cfg->output.error);
  }
}
