#include "cms/cli.hpp"

int main(int argc, char** argv) { return cms::cli::run_cli(argc, argv); }
