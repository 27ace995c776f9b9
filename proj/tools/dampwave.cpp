#include "dampwave/cli.hpp"

int main(int argc, char** argv) { return dampwave::run_cli(argc, argv); }
