#include "hybridgen/harness.hpp"

int main(int argc, char** argv) { return hg::cli_main(argc, argv); }
