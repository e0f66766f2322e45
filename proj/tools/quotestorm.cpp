#include "quotestorm/cli.hpp"

int main(int argc, char** argv) { return quotestorm::run_cli(argc, argv); }
