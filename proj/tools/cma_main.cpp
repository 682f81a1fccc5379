// Command-line front end: cma {solve|verify|sweep|degenerate} --config <path>

#include <CLI11.hpp>

#include <iostream>

#include "cma/runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Complex Monge-Ampere lab on flat and perturbed tori"};
  app.require_subcommand(1);
  std::string config_path;
  for (const char* name : {"solve", "verify", "sweep", "degenerate"}) {
    auto* sub = app.add_subcommand(name, std::string("run the ") + name + " pipeline");
    sub->add_option("--config", config_path, "INI configuration file")->required()->check(CLI::ExistingFile);
  }
  CLI11_PARSE(app, argc, argv);

  try {
    cma::RunConfig cfg = cma::parse_config_file(config_path);
    cfg.command = cma::parse_command(app.get_subcommands().front()->get_name());
    const cma::RunReport rep = cma::run(cfg);
    for (const auto& [name, chk] : rep.json["checks"].items()) {
      std::cout << (chk["pass"].get<bool>() ? "PASS " : "FAIL ") << name << " = "
                << chk["value"].dump() << " (" << chk["rule"].get<std::string>() << ' '
                << chk["threshold"].dump() << ")\n";
    }
    if (cfg.output_dir.empty()) std::cout << cma::dump_report(rep);
    return rep.all_pass ? 0 : 1;
  } catch (const cma::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}
