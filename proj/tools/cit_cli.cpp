#include "cli.hpp"

int main(int argc, char** argv) { return cit::cli::run_cli(argc, argv); }
