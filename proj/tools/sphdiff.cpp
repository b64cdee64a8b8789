#include "sphdiff/cli.hpp"

int main(int argc, char** argv) { return sphdiff::run_cli(argc, argv); }
