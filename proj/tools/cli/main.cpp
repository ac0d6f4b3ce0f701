#include "cli/app.hpp"

int main(int argc, char** argv) { return bbsmc::cli::cli_main(argc, argv); }
