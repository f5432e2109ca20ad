from pysail.exchange import basis_url, fetch_basis

HYDROGEN = "H 0\nS 1 1.00\n 1.0 1.0\n****\n"


def mock_session(mocker, status: int, text: str = ""):
    response = mocker.MagicMock(status=status)
    response.text = mocker.AsyncMock(return_value=text)
    request = mocker.MagicMock()
    request.__aenter__ = mocker.AsyncMock(return_value=response)
    request.__aexit__ = mocker.AsyncMock(return_value=False)
    session = mocker.MagicMock()
    session.get.return_value = request
    return session


def test_basis_url():
    assert basis_url("STO-3G").endswith("/basis/sto-3g/format/gaussian94/")


async def test_fetch(mocker):
    session = mock_session(mocker, 200, HYDROGEN)
    text = await fetch_basis("sto-3g", ["h", "O"], session)

    assert text == HYDROGEN
    session.get.assert_called_once_with(basis_url("sto-3g"), params={"elements": "1,8"})


async def test_fetch_not_found(mocker):
    session = mock_session(mocker, 404)
    assert await fetch_basis("sto-3g", ["H"], session) is None


async def test_fetch_owns_session(mocker):
    session = mock_session(mocker, 200, HYDROGEN)
    owned = mocker.MagicMock()
    owned.__aenter__ = mocker.AsyncMock(return_value=session)
    owned.__aexit__ = mocker.AsyncMock(return_value=False)
    factory = mocker.patch("pysail.exchange.ClientSession", return_value=owned)

    assert await fetch_basis("sto-3g", ["H"]) == HYDROGEN
    factory.assert_called_once_with()
    owned.__aexit__.assert_awaited_once()
