// ellip: experiment runner. Exit status 0 on success, 1 on any failure.

#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

#include "ellip/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Elliptical attention experiments"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  struct Options {
    std::string config, out;
    std::vector<std::string> overrides;
    std::size_t jobs = 1;
    bool show_keys = false;
  } opt;

  for (const auto& cmd : ellip::cli::commands()) {
    CLI::App* sub = app.add_subcommand(cmd.name, cmd.help);
    sub->add_option("-c,--config", opt.config, "flat key = value config file (must list every key)");
    sub->add_option("-s,--set", opt.overrides, "override, key=value (repeatable)");
    sub->add_option("-o,--out", opt.out, "output directory (default $ELLIP_OUT_ROOT/<command>)");
    sub->add_option("-j,--jobs", opt.jobs, "threads across seeds")->check(CLI::PositiveNumber);
    sub->add_flag("--keys", opt.show_keys, "print the config keys with defaults and exit");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    if (opt.show_keys) {
      for (const auto& k : ellip::cli::find_command(name).schema())
        std::cout << k.key << " = " << k.default_value << (k.help.empty() ? "" : "    # " + k.help) << "\n";
      return 0;
    }
    ellip::cli::CommandContext ctx;
    ctx.out_dir = ellip::cli::resolve_out_dir(opt.out, name);
    ctx.jobs = opt.jobs;
    return ellip::cli::run_command(name, opt.config, opt.overrides, ctx);
  } catch (const ellip::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
  } catch (const ellip::FileError& e) {
    std::cerr << "file error: " << e.what() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
  }
  return 1;
}
