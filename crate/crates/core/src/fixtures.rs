//! Small reference workflows shared by unit tests, integration tests and benches.

/// A single `build` job running in a gcc container with four steps.
pub const HELLO_C_WORKFLOW: &str = r#"name: hello-world
on: push
jobs:
  build:
    runs-on: ubuntu-latest
    container:
      image: gcc:latest
    steps:
      - uses: actions/checkout@v2
      - name: Compile
        run: gcc -o hello hello.c
      - name: Run
        run: ./hello
      - name: Upload binary
        uses: actions/upload-artifact@v2
        with:
          name: hello
          path: ./hello
"#;

/// WordPress plugin test workflow carrying an action version, a script file,
/// an IP address and a vendor path.
pub const PHPUNIT_WORKFLOW: &str = r#"name: PHPUnit
on: [push]
jobs:
  test:
    runs-on: ubuntu-latest
    steps:
      - uses: actions/checkout@v2
      - name: Install WP tests
        run: bash bin/install-wp-test.sh wordpress_test root root 127.0.0.1 latest
      - name: Run tests
        run: ./vendor/bin/phpunit
"#;

/// Abstracted canonical rendering of [`PHPUNIT_WORKFLOW`].
pub const PHPUNIT_ABSTRACTED: &str = r#"{"name": "PHPUnit", "on": ["push"], "jobs": {"test": {"runs-on": "ubuntu-latest", "steps": [{"uses": "actions/checkout@<PLH>"}, {"name": "Install WP tests", "run": "bash <FILE> wordpress_test root root <URL> latest"}, {"name": "Run tests", "run": "<PATH>"}]}}}"#;

/// One job with five steps; the third is `Yarn install`.
pub const FIVE_STEP_WORKFLOW: &str = r#"name: CI
on:
  push:
    branches: [ main ]
  pull_request:
    branches: [ main ]
jobs:
  build:
    runs-on: ubuntu-latest
    timeout-minutes: 10
    steps:
      - uses: actions/checkout@v2
      - name: Setup Node
        uses: actions/setup-node@v2
        with:
          node-version: '14'
      - name: Yarn install
        run: yarn install --frozen-lockfile
      - name: Lint
        run: yarn lint
      - name: Test
        run: yarn test
"#;

/// Two jobs with three and two steps.
pub const TWO_JOBS_WORKFLOW: &str = r#"name: Node CI
on:
  push:
    branches: [main]
jobs:
  test:
    runs-on: ubuntu-latest
    steps:
      - uses: actions/checkout@v3
      - name: Setup node
        uses: actions/setup-node@v3
        with:
          node-version: 18
      - name: Test
        run: |
          npm ci
          npm test
  deploy:
    runs-on: ubuntu-latest
    needs: test
    steps:
      - uses: actions/checkout@v3
      - name: Deploy
        run: ./scripts/deploy.sh --prod
"#;
