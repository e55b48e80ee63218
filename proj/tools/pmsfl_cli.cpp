// Command-line front end. Everything goes through the C API in pmsfl.h;
// CLI11 and nlohmann/json are used only for argument and output plumbing.

#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "pmsfl.h"

namespace {

using nlohmann::json;

struct ConfigHandle {
  pmsfl_config* ptr = nullptr;
  ~ConfigHandle() { pmsfl_config_free(ptr); }
};

struct StringHandle {
  char* ptr = nullptr;
  ~StringHandle() { pmsfl_string_free(ptr); }
};

int fail_with(pmsfl_status status, const char* what) {
  std::fprintf(stderr, "error (%s) in %s: %s\n", pmsfl_status_name(status),
               what, pmsfl_last_error());
  return 1;
}

int cmd_run(const std::string& config_path, const std::string& out_dir,
            bool dump_masks, bool quiet) {
  ConfigHandle cfg;
  pmsfl_status st = pmsfl_config_from_file(config_path.c_str(), &cfg.ptr);
  if (st != PMSFL_OK) return fail_with(st, "config");
  StringHandle summary;
  st = pmsfl_run(cfg.ptr, out_dir.c_str(), dump_masks ? 1 : 0, &summary.ptr);
  if (st != PMSFL_OK) return fail_with(st, "run");
  if (!quiet && summary.ptr) std::printf("%s\n", summary.ptr);
  return 0;
}

int cmd_attack(const std::string& config_path, const std::string& out_dir,
               bool quiet) {
  ConfigHandle cfg;
  pmsfl_status st = pmsfl_config_from_file(config_path.c_str(), &cfg.ptr);
  if (st != PMSFL_OK) return fail_with(st, "config");
  StringHandle summary;
  st = pmsfl_attack_eval(cfg.ptr, out_dir.c_str(), &summary.ptr);
  if (st != PMSFL_OK) return fail_with(st, "attack");
  if (!quiet && summary.ptr) std::printf("%s\n", summary.ptr);
  return 0;
}

int cmd_dp_calc(double eps, double delta, double c, std::uint32_t d,
                double gamma, std::uint32_t rounds, std::uint32_t batch,
                const std::vector<double>& alpha_grid, bool printed_form,
                bool as_json) {
  double eps_amp = 0.0, sigma2_update = 0.0, sigma2_mask = 0.0,
         eps_bernoulli = 0.0;
  pmsfl_status st = pmsfl_epsilon_amp_forward(eps, c, d, &eps_amp);
  if (st != PMSFL_OK) return fail_with(st, "epsilon_amp_forward");
  st = pmsfl_sigma2_update_noise(rounds, gamma, eps, delta, batch,
                                 &sigma2_update);
  if (st != PMSFL_OK) return fail_with(st, "sigma2_update_noise");
  st = pmsfl_sigma2_mask_noise(c, eps, delta, &sigma2_mask);
  if (st != PMSFL_OK) return fail_with(st, "sigma2_mask_noise");
  st = pmsfl_bernoulli_amplified_epsilon(
      eps, c, d, alpha_grid.empty() ? nullptr : alpha_grid.data(),
      alpha_grid.size(), printed_form ? 1 : 0, &eps_bernoulli);
  if (st != PMSFL_OK) return fail_with(st, "bernoulli_amplified_epsilon");

  if (as_json) {
    json j;
    j["inputs"] = {{"epsilon", eps}, {"delta", delta}, {"c", c},
                   {"d", d},         {"gamma", gamma}, {"rounds", rounds},
                   {"batch", batch}, {"printed_form", printed_form}};
    j["epsilon_amp_forward"] = eps_amp;
    j["sigma2_update_noise"] = sigma2_update;
    j["sigma2_mask_noise"] = sigma2_mask;
    j["bernoulli_amplified_epsilon"] = eps_bernoulli;
    std::printf("%s\n", j.dump(2).c_str());
  } else {
    std::printf("inputs: epsilon=%g delta=%g c=%g d=%u gamma=%g rounds=%u "
                "batch=%u\n",
                eps, delta, c, d, gamma, rounds, batch);
    std::printf("%-32s %.12g\n", "epsilon_amp_forward", eps_amp);
    std::printf("%-32s %.12g\n", "sigma2_update_noise", sigma2_update);
    std::printf("%-32s %.12g\n", "sigma2_mask_noise", sigma2_mask);
    std::printf("%-32s %.12g\n", "bernoulli_amplified_epsilon",
                eps_bernoulli);
  }
  return 0;
}

int cmd_partition(std::uint64_t seed, std::size_t clients, double alpha,
                  std::size_t classes, std::size_t dim,
                  std::size_t samples_per_class,
                  std::size_t personalized_classes) {
  json j;
  j["seed"] = seed;
  j["clients"] = clients;
  j["widths"] = {dim};
  j["split_tiers"] = {1};
  j["dataset"] = {{"kind", "gaussian-blobs"},
                  {"classes", classes},
                  {"dim", dim},
                  {"samples_per_class", samples_per_class}};
  if (personalized_classes > 0)
    j["dataset"]["partition"] = {{"type", "personalized"},
                                 {"classes_per_client", personalized_classes}};
  else
    j["dataset"]["partition"] = {{"type", "dirichlet"}, {"alpha", alpha}};

  ConfigHandle cfg;
  pmsfl_status st = pmsfl_config_from_json(j.dump().c_str(), &cfg.ptr);
  if (st != PMSFL_OK) return fail_with(st, "config");
  StringHandle out;
  st = pmsfl_partition_preview(cfg.ptr, &out.ptr);
  if (st != PMSFL_OK) return fail_with(st, "partition");
  std::printf("%s\n", out.ptr);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Split federated learning simulator with probabilistic masks"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out";
  bool dump_masks = false, quiet = false;

  CLI::App* run = app.add_subcommand("run", "Run a training experiment");
  run->add_option("--config", config_path, "JSON config file")->required();
  run->add_option("--out", out_dir, "Output directory");
  run->add_flag("--dump-masks", dump_masks, "Write bit-packed uplink masks");
  run->add_flag("--quiet", quiet, "Do not print the summary");

  CLI::App* atk =
      app.add_subcommand("attack", "Run reconstruction-attack trials");
  atk->add_option("--config", config_path, "JSON config file")->required();
  atk->add_option("--out", out_dir, "Output directory");
  atk->add_flag("--quiet", quiet, "Do not print the summary");

  double eps = 1.0, delta = 1e-5, c = 0.25, gamma = 1.0;
  std::uint32_t d = 1, rounds = 1, batch = 32;
  std::vector<double> alpha_grid;
  bool printed_form = false, as_json = false;
  CLI::App* dp = app.add_subcommand("dp-calc", "Privacy calculators");
  dp->add_option("--eps", eps, "Base privacy budget");
  dp->add_option("--delta", delta, "Failure probability");
  dp->add_option("--c", c, "Probability clip parameter, in (0, 0.5)");
  dp->add_option("--d", d, "Mask dimension");
  dp->add_option("--gamma", gamma, "Update clip bound");
  dp->add_option("--rounds", rounds, "Local iterations composed");
  dp->add_option("--batch", batch, "Batch size |Q_k|");
  dp->add_option("--alpha-grid", alpha_grid,
                 "Alpha values for the Bernoulli amplification search");
  dp->add_flag("--printed-form", printed_form,
               "Use the non-symmetric amplification summand");
  dp->add_flag("--json", as_json, "Emit JSON");

  std::uint64_t pseed = 1;
  std::size_t pclients = 10, pclasses = 8, pdim = 16, pspc = 120,
              ppersonal = 0;
  double palpha = 0.3;
  CLI::App* part =
      app.add_subcommand("partition", "Preview a client data partition");
  part->add_option("--seed", pseed, "Seed");
  part->add_option("--clients", pclients, "Number of clients");
  part->add_option("--alpha", palpha, "Dirichlet concentration");
  part->add_option("--classes", pclasses, "Dataset classes");
  part->add_option("--dim", pdim, "Feature dimension");
  part->add_option("--samples-per-class", pspc, "Samples per class");
  part->add_option("--personalized-classes", ppersonal,
                   "Use the personalized partition with this many classes "
                   "per client");

  CLI11_PARSE(app, argc, argv);

  if (run->parsed()) return cmd_run(config_path, out_dir, dump_masks, quiet);
  if (atk->parsed()) return cmd_attack(config_path, out_dir, quiet);
  if (dp->parsed())
    return cmd_dp_calc(eps, delta, c, d, gamma, rounds, batch, alpha_grid,
                       printed_form, as_json);
  if (part->parsed())
    return cmd_partition(pseed, pclients, palpha, pclasses, pdim, pspc,
                         ppersonal);
  return 1;
}
