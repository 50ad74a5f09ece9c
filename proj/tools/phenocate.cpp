#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "phenocate/error.hpp"
#include "phenocate/pipeline.hpp"

namespace pl = phenocate::pipeline;

int main(int argc, char** argv) {
  CLI::App app{"Treatment-effect phenotypes from survival data", "phenocate"};
  app.set_version_flag("--version", pl::kVersion);
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out_dir;
  std::size_t jobs = 0;
  app.add_option("-c,--config", config_path, "JSON config file (defaults apply when omitted)");
  app.add_option("-o,--out", out_dir, "output directory (overrides config and PHENOCATE_OUT)");
  app.add_option("-j,--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
  bool print_defaults = false;
  app.add_flag("--print-default-config", print_defaults, "print the default config and exit");

  auto* simulate = app.add_subcommand("simulate", "simulate replicate datasets and ground truth");
  auto* match = app.add_subcommand("match", "propensity-score matching and balance");
  auto* fit_rpsm = app.add_subcommand("fit-rpsm", "fit the spline survival model");
  auto* fit_nnet = app.add_subcommand("fit-nnet", "train the discrete-time survival network");
  auto* cate = app.add_subcommand("cate", "bootstrap ensemble of CATE curves");
  auto* cluster = app.add_subcommand("cluster", "k-means on every replicate of an ensemble");
  auto* consensus = app.add_subcommand("consensus", "consensus partitions and centroids");
  auto* phenotype = app.add_subcommand("phenotype", "end-to-end phenotyping run");
  auto* study = app.add_subcommand("agreement-study", "agreement with ground truth across sample sizes");
  auto* compare = app.add_subcommand("compare-engines", "L2 distance of each engine to the true cumulative hazard");

  std::string ensemble_dir, partitions_dir;
  cluster->add_option("--ensemble", ensemble_dir, "ensemble directory written by cate")->required();
  consensus->add_option("--partitions", partitions_dir, "clustering directory written by cluster")->required();
  consensus->add_option("--ensemble", ensemble_dir, "ensemble directory written by cate")->required();

  // --print-default-config needs no subcommand.
  for (int i = 1; i < argc; ++i) {
    if (std::string(argv[i]) == "--print-default-config") {
      std::cout << pl::default_config_json().dump(2) << '\n';
      return 0;
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    pl::Config config = config_path.empty() ? pl::parse_config(pl::default_config_json()) : pl::load_config(config_path);
    if (!out_dir.empty()) config.output_dir = out_dir;
    if (jobs > 0) config.jobs = jobs;

    if (simulate->parsed()) pl::cmd_simulate(config);
    else if (match->parsed()) pl::cmd_match(config);
    else if (fit_rpsm->parsed()) pl::cmd_fit_rpsm(config);
    else if (fit_nnet->parsed()) pl::cmd_fit_nnet(config);
    else if (cate->parsed()) pl::cmd_cate(config);
    else if (cluster->parsed()) pl::cmd_cluster(config, ensemble_dir);
    else if (consensus->parsed()) pl::cmd_consensus(config, partitions_dir, ensemble_dir);
    else if (phenotype->parsed()) pl::cmd_phenotype(config);
    else if (study->parsed()) pl::cmd_agreement_study(config);
    else if (compare->parsed()) pl::cmd_compare_engines(config);
    std::cout << pl::resolve_output_dir(config).string() << '\n';
    return 0;
  } catch (const phenocate::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const phenocate::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const phenocate::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
