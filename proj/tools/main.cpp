#include "pisa/cli.hpp"

int main(int argc, char** argv) { return pisa::run_cli(argc, argv); }
