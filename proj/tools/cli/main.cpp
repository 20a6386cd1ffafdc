// segfuse: command-line front end.
// Exit status: 0 success, 1 domain error, 2 usage error.

#include <iostream>

#include "cli/common.hpp"

int main(int argc, char** argv) {
  using namespace segfuse;
  CLI::App app{"Label fusion, annotation and evaluation toolkit for segmentation ground truth", "segfuse"};
  app.require_subcommand(1, 1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  cli::Command selected;
  cli::register_fusion_commands(app, selected);
  cli::register_eval_commands(app, selected);
  cli::register_dataset_commands(app, selected);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    selected();
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
    return 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error [format]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
