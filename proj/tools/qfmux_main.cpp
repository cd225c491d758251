#include "qfmux/cli.hpp"

int main(int argc, char** argv) { return qfmux::cli::run(argc, argv); }
